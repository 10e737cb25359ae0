#include "kgforge/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "kgforge/datasets.hpp"
#include "kgforge/errors.hpp"
#include "kgforge/eval.hpp"
#include "kgforge/log.hpp"
#include "kgforge/models.hpp"
#include "kgforge/sampling.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace kgforge::cli {

namespace {

constexpr std::uint64_t kSweepTag = 0x73777065;  // "swpe"

void write_text_file(const std::string& path, const std::string& content) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

SplitSizes parse_sizes(const std::string& sizes, const DatasetSpec& spec) {
    if (sizes.empty()) return {spec.train_size, spec.valid_size, spec.test_size};
    SplitSizes out;
    if (std::sscanf(sizes.c_str(), "%d,%d,%d", &out.train, &out.valid, &out.test) != 3 ||
        out.train < 0 || out.valid < 0 || out.test < 0) {
        throw ConfigError("--sizes expects train,valid,test counts, got '" + sizes + "'");
    }
    return out;
}

GenerationConfig generation_config(const RunConfig& cfg) {
    GenerationConfig g;
    g.temperature = cfg.temperature;
    g.top_k = cfg.top_k;
    g.top_p = cfg.top_p;
    g.max_len = cfg.max_len;
    g.beam_width = cfg.beam_width;
    g.seed = cfg.seed;
    return g;
}

// Trains per cfg into cfg.out_dir: checkpoint files at the root plus
// metrics.log.
void run_training(RunConfig cfg) {
    if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir: required for training");
    const DatasetBundle data = load_dataset(cfg.dataset_dir, dataset_from_string(cfg.dataset));
    if (cfg.max_len == 0) cfg.max_len = data.max_len;

    TrainResult result;
    if (cfg.model == "ark") {
        ArkModel model = make_ark(cfg, data.vocab);
        result = train_model(cfg, data, &model, nullptr);
        save_checkpoint(cfg.out_dir, cfg, data.vocab, std::as_const(model).parameters());
    } else {
        SailModel model = make_sail(cfg, data.vocab);
        result = train_model(cfg, data, nullptr, &model);
        save_checkpoint(cfg.out_dir, cfg, data.vocab, std::as_const(model).parameters());
    }
    write_text_file((fs::path(cfg.out_dir) / "metrics.log").string(), format_metrics_log(result.log));
    log_info("checkpoint written to " + cfg.out_dir +
             " (best epoch " + std::to_string(result.best_epoch) + ")");
}

// Validity predicate for a loaded dataset; owns the slot map for wd-*.
struct ValidatorContext {
    DatasetId id;
    const Vocabulary* vocab;
    std::optional<SlotTypeMap> slots;

    explicit ValidatorContext(const DatasetBundle& data) : id(data.id), vocab(&data.vocab) {
        if (!is_synthetic(id)) slots.emplace(infer_slot_types(data.train));
    }
    bool operator()(const KnowledgeGraph& g) const {
        return validate(id, g, *vocab, slots ? &*slots : nullptr).valid;
    }
};

std::vector<SampleResult> draw_samples(const Checkpoint& ckpt, const GenerationConfig& gen, int n,
                                       const std::string& mode) {
    if (ckpt.is_sail()) {
        const DecodeMode m = mode == "ancestral" ? DecodeMode::kAncestral : DecodeMode::kBeam;
        return sample_many_sail(*ckpt.sail, ckpt.vocab, gen, n, m);
    }
    if (mode == "beam") {
        std::vector<SampleResult> out(static_cast<std::size_t>(n));
        ArkScorer scorer(*ckpt.ark);
        const TokenSequence seq = beam_search(scorer, gen.beam_width, gen.max_len);
        for (auto& s : out) {
            s.sequence = seq;
            s.graph = parse_sequence(seq, ckpt.vocab);
        }
        return out;
    }
    return sample_many_ark(*ckpt.ark, ckpt.vocab, gen, n);
}

struct SweepRow {
    int value = 0;
    double pct_valid_and_novel = 0;
};

SweepRow run_sweep_point(const RunConfig& base, const std::string& axis, int value,
                         std::uint64_t run_seed, int sample_n) {
    RunConfig cfg = base;
    cfg.seed = run_seed;
    if (axis == "d_model") {
        cfg.d_model = value;
    } else if (axis == "n_layers") {
        cfg.n_layers = value;
    } else if (axis == "d_z") {
        cfg.d_z = value;
    } else {
        throw ConfigError("--axis must be one of d_model, n_layers, d_z");
    }
    cfg.out_dir = (fs::path(base.out_dir) / ("sweep_" + axis + "_" + std::to_string(value))).string();
    run_training(cfg);

    const Checkpoint ckpt = load_checkpoint(cfg.out_dir);
    const DatasetBundle data = load_dataset(cfg.dataset_dir, dataset_from_string(cfg.dataset));
    const ValidatorContext valid(data);
    GenerationConfig gen = generation_config(ckpt.config);

    const std::vector<SampleResult> samples =
        draw_samples(ckpt, gen, sample_n, ckpt.is_sail() ? "beam" : "ancestral");
    std::vector<KnowledgeGraph> graphs;
    graphs.reserve(samples.size());
    for (const auto& s : samples) graphs.push_back(s.graph);

    auto known = canonical_key_set(data.train);
    for (const auto& k : canonical_key_set(data.valid)) known.insert(k);
    const SampleReport report =
        evaluate_samples(graphs, [&](const KnowledgeGraph& g) { return valid(g); }, known);

    SweepRow row;
    row.value = value;
    row.pct_valid_and_novel = report.pct_novel_and_valid;
    return row;
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"graph sequence model toolkit"};
    app.require_subcommand(1);

    // generate-data
    auto* gen_cmd = app.add_subcommand("generate-data", "generate a synthetic dataset directory");
    std::string gd_dataset, gd_out, gd_sizes;
    std::uint64_t gd_seed = 0;
    bool gd_dedup = false;
    gen_cmd->add_option("--dataset", gd_dataset, "dataset id")->required();
    gen_cmd->add_option("--out", gd_out, "output directory")->required();
    gen_cmd->add_option("--seed", gd_seed, "generator seed");
    gen_cmd->add_option("--sizes", gd_sizes, "train,valid,test counts");
    gen_cmd->add_flag("--dedup-splits", gd_dedup, "keep canonical keys disjoint across splits");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    std::string tr_config, tr_out;
    std::optional<std::uint64_t> tr_seed;
    train_cmd->add_option("--config", tr_config, "run config file")->required();
    train_cmd->add_option("--seed", tr_seed, "override the config seed");
    train_cmd->add_option("--out", tr_out, "override the output directory");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "draw graphs from a checkpoint");
    std::string sm_ckpt, sm_mode, sm_out;
    int sm_n = 10000;
    std::optional<double> sm_temp, sm_top_p;
    std::optional<int> sm_top_k, sm_beam;
    std::optional<std::uint64_t> sm_seed;
    sample_cmd->add_option("--checkpoint", sm_ckpt, "checkpoint directory")->required();
    sample_cmd->add_option("--n", sm_n, "number of samples");
    sample_cmd->add_option("--mode", sm_mode, "ancestral or beam")
        ->check(CLI::IsMember({"ancestral", "beam", ""}));
    sample_cmd->add_option("--temperature", sm_temp, "softmax temperature");
    sample_cmd->add_option("--top-k", sm_top_k, "top-k cutoff (0 = all)");
    sample_cmd->add_option("--top-p", sm_top_p, "nucleus mass");
    sample_cmd->add_option("--beam-width", sm_beam, "beam width");
    sample_cmd->add_option("--seed", sm_seed, "sampling seed");
    sample_cmd->add_option("--out", sm_out, "samples file")->required();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score samples and test compression");
    std::string ev_ckpt, ev_dataset, ev_samples, ev_report;
    eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--dataset", ev_dataset, "dataset directory")->required();
    eval_cmd->add_option("--samples", ev_samples, "samples file")->required();
    eval_cmd->add_option("--report", ev_report, "report JSON path")->required();

    // interpolate
    auto* interp_cmd = app.add_subcommand("interpolate", "decode a latent interpolation path");
    std::string ip_ckpt, ip_dataset, ip_out;
    int ip_from = 0, ip_to = 1, ip_points = 5;
    interp_cmd->add_option("--checkpoint", ip_ckpt, "checkpoint directory")->required();
    interp_cmd->add_option("--dataset", ip_dataset, "dataset directory (default: config)");
    interp_cmd->add_option("--from-graph", ip_from, "test split index of the start graph");
    interp_cmd->add_option("--to-graph", ip_to, "test split index of the end graph");
    interp_cmd->add_option("--points", ip_points, "number of interpolation points");
    interp_cmd->add_option("--out", ip_out, "trace file")->required();

    // smoothness
    auto* smooth_cmd = app.add_subcommand("smoothness", "latent random-walk smoothness metrics");
    std::string sth_ckpt, sth_dataset, sth_report;
    double sth_eps = 0.1;
    int sth_steps = 20, sth_anchors = 100;
    std::uint64_t sth_seed = 0;
    smooth_cmd->add_option("--checkpoint", sth_ckpt, "checkpoint directory")->required();
    smooth_cmd->add_option("--dataset", sth_dataset, "dataset directory (default: config)");
    smooth_cmd->add_option("--epsilon", sth_eps, "walk step size");
    smooth_cmd->add_option("--steps", sth_steps, "steps per walk");
    smooth_cmd->add_option("--anchors", sth_anchors, "number of anchor graphs");
    smooth_cmd->add_option("--seed", sth_seed, "walk seed");
    smooth_cmd->add_option("--report", sth_report, "optional report JSON path");

    // export-latents
    auto* latents_cmd = app.add_subcommand("export-latents", "posterior means as CSV");
    std::string xl_ckpt, xl_dataset, xl_split = "test", xl_out;
    latents_cmd->add_option("--checkpoint", xl_ckpt, "checkpoint directory")->required();
    latents_cmd->add_option("--dataset", xl_dataset, "dataset directory (default: config)");
    latents_cmd->add_option("--split", xl_split, "train, valid or test")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    latents_cmd->add_option("--out", xl_out, "CSV path")->required();

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "axis sweep with a combined CSV");
    std::string sw_axis = "d_model", sw_values, sw_config, sw_out;
    int sw_parallel = 1, sw_sample_n = 10000;
    sweep_cmd->add_option("--axis", sw_axis, "d_model, n_layers or d_z");
    sweep_cmd->add_option("--values", sw_values, "comma-separated values")->required();
    sweep_cmd->add_option("--config", sw_config, "base run config")->required();
    sweep_cmd->add_option("--parallel", sw_parallel, "concurrent runs");
    sweep_cmd->add_option("--sample-n", sw_sample_n, "samples per configuration");
    sweep_cmd->add_option("--out", sw_out, "combined CSV path (default: <out_dir>/sweep.csv)");

    std::vector<const char*> argv;
    argv.push_back("kgforge");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (gen_cmd->parsed()) {
        const DatasetId id = dataset_from_string(gd_dataset);
        if (!is_synthetic(id)) {
            throw ConfigError("generate-data supports the synthetic datasets only");
        }
        const DatasetBundle bundle = generate_splits(id, parse_sizes(gd_sizes, dataset_spec(id)),
                                                     gd_seed, gd_dedup);
        save_dataset(gd_out, bundle);
        log_info("wrote " + gd_out);
    } else if (train_cmd->parsed()) {
        RunConfig cfg = load_config_file(tr_config);
        if (tr_seed) cfg.seed = *tr_seed;
        if (!tr_out.empty()) cfg.out_dir = tr_out;
        run_training(cfg);
    } else if (sample_cmd->parsed()) {
        const Checkpoint ckpt = load_checkpoint(sm_ckpt);
        GenerationConfig gen = generation_config(ckpt.config);
        if (sm_temp) gen.temperature = *sm_temp;
        if (sm_top_k) gen.top_k = *sm_top_k;
        if (sm_top_p) gen.top_p = *sm_top_p;
        if (sm_beam) gen.beam_width = *sm_beam;
        if (sm_seed) gen.seed = *sm_seed;
        if (gen.temperature <= 0) throw ConfigError("temperature must be > 0");
        if (gen.top_p <= 0 || gen.top_p > 1) throw ConfigError("top_p: must be in (0, 1]");
        if (gen.beam_width < 1) throw ConfigError("beam_width: must be >= 1");
        const std::string mode = !sm_mode.empty() ? sm_mode : (ckpt.is_sail() ? "beam" : "ancestral");
        const std::vector<SampleResult> samples = draw_samples(ckpt, gen, sm_n, mode);
        std::vector<KnowledgeGraph> graphs;
        graphs.reserve(samples.size());
        for (const auto& s : samples) graphs.push_back(s.graph);
        if (const fs::path parent = fs::path(sm_out).parent_path(); !parent.empty()) {
            fs::create_directories(parent);
        }
        write_graph_file(sm_out, graphs, ckpt.vocab);
        log_info("wrote " + std::to_string(graphs.size()) + " samples to " + sm_out);
    } else if (eval_cmd->parsed()) {
        const Checkpoint ckpt = load_checkpoint(ev_ckpt);
        const DatasetBundle data = load_dataset(ev_dataset, dataset_from_string(ckpt.config.dataset));
        const ValidatorContext valid(data);
        const std::vector<KnowledgeGraph> samples = read_graph_file(ev_samples, ckpt.vocab);
        auto known = canonical_key_set(data.train);
        for (const auto& k : canonical_key_set(data.valid)) known.insert(k);
        const SampleReport report =
            evaluate_samples(samples, [&](const KnowledgeGraph& g) { return valid(g); }, known);

        ordered_json j;
        j["n"] = report.n_samples;
        j["pct_valid"] = report.pct_valid;
        j["pct_novel_and_valid"] = report.pct_novel_and_valid;
        j["pct_empty"] = report.pct_empty;
        if (ckpt.is_sail()) {
            const SailBound mean = mean_compression_bound_sail(*ckpt.sail, ckpt.vocab, data.test,
                                                               ckpt.config.seed);
            j["mean_bits"] = mean.bound_bits;
            j["kl_bits"] = mean.kl_bits;
        } else {
            j["mean_bits"] = mean_compression_ark(*ckpt.ark, ckpt.vocab, data.test, ckpt.config.seed);
        }
        const std::string text = j.dump(2) + "\n";
        write_text_file(ev_report, text);
        std::fputs(text.c_str(), stdout);
    } else if (interp_cmd->parsed()) {
        const Checkpoint ckpt = load_checkpoint(ip_ckpt);
        if (!ckpt.is_sail()) throw ConfigError("interpolate requires a sail checkpoint");
        const std::string dir = !ip_dataset.empty() ? ip_dataset : ckpt.config.dataset_dir;
        const DatasetBundle data = load_dataset(dir, dataset_from_string(ckpt.config.dataset));
        const auto& test = data.test;
        if (ip_from < 0 || ip_to < 0 || ip_from >= static_cast<int>(test.size()) ||
            ip_to >= static_cast<int>(test.size())) {
            throw ConfigError("--from-graph/--to-graph outside the test split");
        }
        const auto trace = interpolate(*ckpt.sail, ckpt.vocab, test[static_cast<std::size_t>(ip_from)],
                                       test[static_cast<std::size_t>(ip_to)], ip_points,
                                       generation_config(ckpt.config));
        std::string out;
        char buf[64];
        bool first = true;
        for (const auto& [alpha, graph] : trace) {
            if (!first) out += '\n';
            first = false;
            std::snprintf(buf, sizeof buf, "# alpha %.6g\n", alpha);
            out += buf;
            for (const Triple& t : graph.triples()) {
                out += ckpt.vocab.label(t.head) + "\t" + ckpt.vocab.label(t.relation) + "\t" +
                       ckpt.vocab.label(t.tail) + "\n";
            }
        }
        write_text_file(ip_out, out);
        log_info("wrote " + ip_out);
    } else if (smooth_cmd->parsed()) {
        const Checkpoint ckpt = load_checkpoint(sth_ckpt);
        if (!ckpt.is_sail()) throw ConfigError("smoothness requires a sail checkpoint");
        const std::string dir = !sth_dataset.empty() ? sth_dataset : ckpt.config.dataset_dir;
        const DatasetBundle data = load_dataset(dir, dataset_from_string(ckpt.config.dataset));
        std::vector<KnowledgeGraph> anchors(
            data.test.begin(),
            data.test.begin() + std::min<std::size_t>(data.test.size(), static_cast<std::size_t>(sth_anchors)));
        const SmoothnessReport rep = smoothness_metrics(*ckpt.sail, ckpt.vocab, anchors, sth_eps,
                                                        sth_steps, sth_seed,
                                                        generation_config(ckpt.config));
        ordered_json j;
        j["local_smoothness"] = rep.local_smoothness;
        j["global_consistency"] = rep.global_consistency;
        j["flip_rate"] = rep.flip_rate;
        j["avg_basin_length"] = rep.avg_basin_length;
        j["n_anchors"] = rep.n_anchors;
        j["n_steps"] = rep.n_steps;
        j["epsilon"] = rep.epsilon;
        const std::string text = j.dump(2) + "\n";
        if (!sth_report.empty()) write_text_file(sth_report, text);
        std::fputs(text.c_str(), stdout);
    } else if (latents_cmd->parsed()) {
        const Checkpoint ckpt = load_checkpoint(xl_ckpt);
        if (!ckpt.is_sail()) throw ConfigError("export-latents requires a sail checkpoint");
        const std::string dir = !xl_dataset.empty() ? xl_dataset : ckpt.config.dataset_dir;
        const DatasetBundle data = load_dataset(dir, dataset_from_string(ckpt.config.dataset));
        const auto& split = xl_split == "train" ? data.train : xl_split == "valid" ? data.valid : data.test;

        // first has_genre object by token id, when the dataset has one
        std::function<std::string(const KnowledgeGraph&)> label_fn;
        bool have_labels = false;
        try {
            const int genre_rel = ckpt.vocab.id("has_genre");
            label_fn = [&vocab = ckpt.vocab, genre_rel](const KnowledgeGraph& g) {
                int best = -1;
                for (const Triple& t : g.triples()) {
                    if (t.relation == genre_rel && (best == -1 || t.tail < best)) best = t.tail;
                }
                return best == -1 ? std::string() : vocab.label(best);
            };
            have_labels = true;
        } catch (const VocabularyMiss&) {
        }
        write_text_file(xl_out, export_latents_csv(*ckpt.sail, ckpt.vocab, split,
                                                   have_labels ? &label_fn : nullptr));
        log_info("wrote " + xl_out);
    } else if (sweep_cmd->parsed()) {
        const RunConfig base = load_config_file(sw_config);
        std::vector<int> values;
        {
            std::string rest = sw_values;
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                const std::string tok = rest.substr(0, comma);
                try {
                    values.push_back(std::stoi(tok));
                } catch (const std::exception&) {
                    throw ConfigError("--values: expected integers, got '" + tok + "'");
                }
                rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
            }
        }
        if (values.empty()) throw ConfigError("--values: at least one value required");
        if (sw_parallel < 1) throw ConfigError("--parallel: must be >= 1");

        std::vector<SweepRow> rows(values.size());
        std::vector<std::exception_ptr> errors(values.size());
        const auto worker = [&](std::size_t i) {
            try {
                rows[i] = run_sweep_point(base, sw_axis, values[i],
                                          mix64(base.seed ^ mix64(kSweepTag ^ i)), sw_sample_n);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        };
        if (sw_parallel == 1) {
            for (std::size_t i = 0; i < values.size(); ++i) worker(i);
        } else {
            for (std::size_t start = 0; start < values.size(); start += static_cast<std::size_t>(sw_parallel)) {
                std::vector<std::thread> pool;
                for (std::size_t i = start;
                     i < std::min(values.size(), start + static_cast<std::size_t>(sw_parallel)); ++i) {
                    pool.emplace_back(worker, i);
                }
                for (std::thread& t : pool) t.join();
            }
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }

        std::string csv = sw_axis + ",pct_valid_and_novel\n";
        char buf[64];
        for (const SweepRow& row : rows) {
            std::snprintf(buf, sizeof buf, "%d,%.17g\n", row.value, row.pct_valid_and_novel);
            csv += buf;
        }
        const std::string out_path =
            !sw_out.empty() ? sw_out : (fs::path(base.out_dir) / "sweep.csv").string();
        write_text_file(out_path, csv);
        std::fputs(csv.c_str(), stdout);
    }
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        return dispatch(args);
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 1;
    } catch (const UnknownDataset& e) {
        log_error(e.what());
        return 1;
    } catch (const InvalidPin& e) {
        log_error(e.what());
        return 1;
    } catch (const Error& e) {
        log_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 2;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace kgforge::cli
