#pragma once

#include <cstdint>
#include <string>

namespace kgforge {

// Flat-key run configuration. Parsed from `key: value` text files, validated
// as a whole (every violation reported at once), serialized back in a fixed
// key order so parse -> serialize -> parse is the identity.
struct RunConfig {
    int schema_version = 1;
    std::string dataset;      // one of the benchmark ids
    std::string dataset_dir;  // directory in the dataset file layout
    std::string model;        // "ark" | "sail"
    int d_model = 64;
    int n_layers = 1;
    int d_z = 16;
    int d_broadcast = 0;  // 0 -> d_model
    double beta = 1.0;
    double lr = 1e-3;
    std::string lr_schedule = "constant";   // constant | cosine
    std::string recurrent_init = "glorot";  // glorot | orthogonal
    int batch_size = 64;
    int epochs = 20;
    std::uint64_t seed = 0;
    double temperature = 1.0;
    int top_k = 0;  // 0 = all
    double top_p = 1.0;
    int beam_width = 3;
    int max_len = 0;  // 0 -> derived from the train split at load time
    double grad_clip = 0.0;
    double weight_decay = 0.0;
    double ema_decay = 0.0;  // 0 disables parameter averaging
    double adam_beta2 = 0.999;
    int kl_warmup_steps = 0;
    std::string out_dir = "run";

    bool operator==(const RunConfig&) const = default;

    int broadcast_width() const { return d_broadcast > 0 ? d_broadcast : d_model; }
};

// Throws ConfigError listing every violation (one per line).
RunConfig validate_config(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace kgforge
