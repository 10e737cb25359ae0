#pragma once

#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgforge/kg.hpp"
#include "kgforge/models.hpp"
#include "kgforge/sampling.hpp"

namespace kgforge {

struct SampleReport {
    int n_samples = 0;
    double pct_valid = 0;
    double pct_novel_and_valid = 0;
    double pct_novel = 0;
    double pct_empty = 0;
};

struct SmoothnessReport {
    double local_smoothness = 0;    // mean Jaccard of consecutive decodes
    double global_consistency = 0;  // mean Jaccard of each step vs the anchor decode
    double flip_rate = 0;           // fraction of consecutive pairs with different keys
    double avg_basin_length = 0;    // mean run length of identical consecutive decodes
    int n_anchors = 0;
    int n_steps = 0;
    double epsilon = 0;
};

// |A n B| / |A u B| over triple sets; both empty -> 1.
double jaccard(const KnowledgeGraph& g1, const KnowledgeGraph& g2);

// known: canonical keys of the train and validation splits.
SampleReport evaluate_samples(const std::vector<KnowledgeGraph>& samples,
                              const std::function<bool(const KnowledgeGraph&)>& is_valid,
                              const std::unordered_set<std::string>& known);

std::unordered_set<std::string> canonical_key_set(const std::vector<KnowledgeGraph>& graphs);

// Teacher-forced -sum log2 p over one seeded linearization; EOS prediction
// included, BOS and PAD excluded.
double compression_ark(const ArkModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                       std::uint64_t order_seed);

struct SailBound {
    double bound_bits = 0;
    double recon_bits = 0;
    double kl_bits = 0;
};

// Single seeded z ~ q(z|G); bound = recon + kl exactly.
SailBound compression_bound_sail(const SailModel& model, const Vocabulary& vocab,
                                 const KnowledgeGraph& graph, std::uint64_t order_seed,
                                 std::uint64_t noise_seed);

// Split means, parallel over graphs with per-graph order seeds derived from
// base_seed.
double mean_compression_ark(const ArkModel& model, const Vocabulary& vocab,
                            const std::vector<KnowledgeGraph>& graphs, std::uint64_t base_seed);
SailBound mean_compression_bound_sail(const SailModel& model, const Vocabulary& vocab,
                                      const std::vector<KnowledgeGraph>& graphs,
                                      std::uint64_t base_seed);

// Noiseless linear interpolation between posterior means, beam-decoded on a
// uniform alpha grid (n_points >= 2 gives both endpoints).
std::vector<std::pair<double, KnowledgeGraph>> interpolate(const SailModel& model,
                                                           const Vocabulary& vocab,
                                                           const KnowledgeGraph& g1,
                                                           const KnowledgeGraph& g2, int n_points,
                                                           const GenerationConfig& cfg);

// Random latent walks: z steps by epsilon times a uniformly random unit
// direction, each point beam-decoded. Exposed over a decode callback so the
// degenerate cases are testable without a trained model.
SmoothnessReport smoothness_core(
    const std::function<KnowledgeGraph(const std::vector<real>&, int anchor, int step)>& decode,
    const std::vector<std::vector<real>>& anchor_mus, double epsilon, int n_steps,
    std::uint64_t seed);

SmoothnessReport smoothness_metrics(const SailModel& model, const Vocabulary& vocab,
                                    const std::vector<KnowledgeGraph>& anchors, double epsilon,
                                    int n_steps, std::uint64_t seed, const GenerationConfig& cfg);

// CSV: index, canonical-key hash, mu components at full precision, optional
// label column.
std::string export_latents_csv(const SailModel& model, const Vocabulary& vocab,
                               const std::vector<KnowledgeGraph>& graphs,
                               const std::function<std::string(const KnowledgeGraph&)>* label_fn);

}  // namespace kgforge
