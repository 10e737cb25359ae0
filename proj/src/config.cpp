#include "kgforge/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "kgforge/errors.hpp"

namespace kgforge {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // shortest representation that still round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

struct Field {
    const char* key;
    std::function<bool(RunConfig&, const std::string&, std::string&)> parse;  // false -> error in 3rd arg
    std::function<std::string(const RunConfig&)> print;
};

bool parse_int(const std::string& v, long long& out) {
    errno = 0;
    char* end = nullptr;
    out = std::strtoll(v.c_str(), &end, 10);
    return errno == 0 && end != nullptr && *end == '\0' && !v.empty();
}

bool parse_real(const std::string& v, double& out) {
    errno = 0;
    char* end = nullptr;
    out = std::strtod(v.c_str(), &end);
    return errno == 0 && end != nullptr && *end == '\0' && !v.empty();
}

Field int_field(const char* key, int RunConfig::*member) {
    return {key,
            [member, key](RunConfig& c, const std::string& v, std::string& err) {
                long long x;
                if (!parse_int(v, x)) {
                    err = std::string(key) + ": expected an integer, got '" + v + "'";
                    return false;
                }
                c.*member = static_cast<int>(x);
                return true;
            },
            [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(const char* key, double RunConfig::*member) {
    return {key,
            [member, key](RunConfig& c, const std::string& v, std::string& err) {
                double x;
                if (!parse_real(v, x)) {
                    err = std::string(key) + ": expected a number, got '" + v + "'";
                    return false;
                }
                c.*member = x;
                return true;
            },
            [member](const RunConfig& c) { return fmt_double(c.*member); }};
}

Field string_field(const char* key, std::string RunConfig::*member) {
    return {key,
            [member](RunConfig& c, const std::string& v, std::string&) {
                c.*member = v;
                return true;
            },
            [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> kFields = [] {
        std::vector<Field> f;
        f.push_back(int_field("schema_version", &RunConfig::schema_version));
        f.push_back(string_field("dataset", &RunConfig::dataset));
        f.push_back(string_field("dataset_dir", &RunConfig::dataset_dir));
        f.push_back(string_field("model", &RunConfig::model));
        f.push_back(int_field("d_model", &RunConfig::d_model));
        f.push_back(int_field("n_layers", &RunConfig::n_layers));
        f.push_back(int_field("d_z", &RunConfig::d_z));
        f.push_back(int_field("d_broadcast", &RunConfig::d_broadcast));
        f.push_back(real_field("beta", &RunConfig::beta));
        f.push_back(real_field("lr", &RunConfig::lr));
        f.push_back(string_field("lr_schedule", &RunConfig::lr_schedule));
        f.push_back(string_field("recurrent_init", &RunConfig::recurrent_init));
        f.push_back(int_field("batch_size", &RunConfig::batch_size));
        f.push_back(int_field("epochs", &RunConfig::epochs));
        f.push_back({"seed",
                     [](RunConfig& c, const std::string& v, std::string& err) {
                         errno = 0;
                         char* end = nullptr;
                         c.seed = std::strtoull(v.c_str(), &end, 10);
                         if (errno != 0 || end == nullptr || *end != '\0' || v.empty()) {
                             err = "seed: expected a non-negative integer, got '" + v + "'";
                             return false;
                         }
                         return true;
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});
        f.push_back(real_field("temperature", &RunConfig::temperature));
        f.push_back({"top_k",
                     [](RunConfig& c, const std::string& v, std::string& err) {
                         if (v == "all") {
                             c.top_k = 0;
                             return true;
                         }
                         long long x;
                         if (!parse_int(v, x)) {
                             err = "top_k: expected an integer or 'all', got '" + v + "'";
                             return false;
                         }
                         c.top_k = static_cast<int>(x);
                         return true;
                     },
                     [](const RunConfig& c) {
                         return c.top_k == 0 ? std::string("all") : std::to_string(c.top_k);
                     }});
        f.push_back(real_field("top_p", &RunConfig::top_p));
        f.push_back(int_field("beam_width", &RunConfig::beam_width));
        f.push_back(int_field("max_len", &RunConfig::max_len));
        f.push_back(real_field("grad_clip", &RunConfig::grad_clip));
        f.push_back(real_field("weight_decay", &RunConfig::weight_decay));
        f.push_back(real_field("ema_decay", &RunConfig::ema_decay));
        f.push_back(real_field("adam_beta2", &RunConfig::adam_beta2));
        f.push_back(int_field("kl_warmup_steps", &RunConfig::kl_warmup_steps));
        f.push_back(string_field("out_dir", &RunConfig::out_dir));
        return f;
    }();
    return kFields;
}

}  // namespace

RunConfig validate_config(const std::string& text) {
    RunConfig cfg;
    std::vector<std::string> errors;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto colon = stripped.find(':');
        if (colon == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected 'key: value'");
            continue;
        }
        const std::string key = trim(stripped.substr(0, colon));
        const std::string value = trim(stripped.substr(colon + 1));
        const Field* field = nullptr;
        for (const Field& f : fields()) {
            if (key == f.key) {
                field = &f;
                break;
            }
        }
        if (field == nullptr) {
            errors.push_back("unknown key '" + key + "'");
            continue;
        }
        std::string err;
        if (!field->parse(cfg, value, err)) errors.push_back(err);
    }

    const auto require = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };
    require(cfg.schema_version == 1,
            "schema_version: unsupported version " + std::to_string(cfg.schema_version));
    require(!cfg.dataset.empty(), "dataset: required");
    if (!cfg.dataset.empty()) {
        require(cfg.dataset == "syn-paths" || cfg.dataset == "syn-types" || cfg.dataset == "syn-tipr" ||
                    cfg.dataset == "wd-movies" || cfg.dataset == "wd-articles",
                "dataset: unknown id '" + cfg.dataset + "'");
    }
    require(!cfg.model.empty(), "model: required");
    if (!cfg.model.empty()) {
        require(cfg.model == "ark" || cfg.model == "sail",
                "model: must be 'ark' or 'sail', got '" + cfg.model + "'");
    }
    require(cfg.d_model >= 1, "d_model: must be >= 1");
    require(cfg.n_layers >= 1, "n_layers: must be >= 1");
    require(cfg.d_z >= 1, "d_z: must be >= 1");
    require(cfg.d_broadcast >= 0, "d_broadcast: must be >= 0");
    require(cfg.beta >= 0, "beta: must be >= 0");
    require(cfg.lr > 0, "lr: must be > 0");
    require(cfg.lr_schedule == "constant" || cfg.lr_schedule == "cosine",
            "lr_schedule: must be 'constant' or 'cosine', got '" + cfg.lr_schedule + "'");
    require(cfg.recurrent_init == "glorot" || cfg.recurrent_init == "orthogonal",
            "recurrent_init: must be 'glorot' or 'orthogonal', got '" + cfg.recurrent_init + "'");
    require(cfg.batch_size >= 1, "batch_size: must be >= 1");
    require(cfg.epochs >= 0, "epochs: must be >= 0");
    require(cfg.temperature > 0, "temperature must be > 0");
    require(cfg.top_k >= 0, "top_k: must be >= 1 or 'all'");
    require(cfg.top_p > 0 && cfg.top_p <= 1, "top_p: must be in (0, 1]");
    require(cfg.beam_width >= 1, "beam_width: must be >= 1");
    require(cfg.max_len == 0 || cfg.max_len >= 2, "max_len: must be 0 (derive) or >= 2");
    require(cfg.grad_clip >= 0, "grad_clip: must be >= 0");
    require(cfg.weight_decay >= 0, "weight_decay: must be >= 0");
    require(cfg.ema_decay >= 0 && cfg.ema_decay < 1, "ema_decay: must be in [0, 1)");
    require(cfg.adam_beta2 > 0 && cfg.adam_beta2 < 1, "adam_beta2: must be in (0, 1)");
    require(cfg.kl_warmup_steps >= 0, "kl_warmup_steps: must be >= 0");

    if (!errors.empty()) {
        std::string joined;
        for (std::size_t i = 0; i < errors.size(); ++i) {
            if (i > 0) joined += '\n';
            joined += errors[i];
        }
        throw ConfigError(joined);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return validate_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const Field& f : fields()) {
        out += f.key;
        out += ": ";
        out += f.print(cfg);
        out += '\n';
    }
    return out;
}

}  // namespace kgforge
