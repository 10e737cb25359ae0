#include "kgforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace kgforge {

namespace {
constexpr std::uint64_t kCompressionTag = 0x636f6d70;  // "comp"
constexpr std::uint64_t kWalkTag = 0x77616c6b;         // "walk"
}  // namespace

double jaccard(const KnowledgeGraph& g1, const KnowledgeGraph& g2) {
    if (g1.empty() && g2.empty()) return 1.0;
    std::size_t inter = 0;
    const auto& a = g1.triples();
    const auto& b = g2.triples();
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++inter;
            ++i;
            ++j;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

SampleReport evaluate_samples(const std::vector<KnowledgeGraph>& samples,
                              const std::function<bool(const KnowledgeGraph&)>& is_valid,
                              const std::unordered_set<std::string>& known) {
    SampleReport report;
    report.n_samples = static_cast<int>(samples.size());
    if (samples.empty()) return report;

    std::int64_t valid = 0, novel = 0, both = 0, empty = 0;
    for (const KnowledgeGraph& g : samples) {
        const bool v = is_valid(g);
        const bool n = known.count(g.canonical_key()) == 0;
        valid += v;
        novel += n;
        both += v && n;
        empty += g.empty();
    }
    const double scale = 100.0 / static_cast<double>(samples.size());
    report.pct_valid = static_cast<double>(valid) * scale;
    report.pct_novel = static_cast<double>(novel) * scale;
    report.pct_novel_and_valid = static_cast<double>(both) * scale;
    report.pct_empty = static_cast<double>(empty) * scale;
    return report;
}

std::unordered_set<std::string> canonical_key_set(const std::vector<KnowledgeGraph>& graphs) {
    std::unordered_set<std::string> keys;
    keys.reserve(graphs.size() * 2);
    for (const KnowledgeGraph& g : graphs) keys.insert(g.canonical_key());
    return keys;
}

double compression_ark(const ArkModel& model, const Vocabulary& vocab, const KnowledgeGraph& graph,
                       std::uint64_t order_seed) {
    const TokenSequence seq = linearize(graph, vocab, order_seed);
    ArkScorer scorer(model);
    return sequence_nll_nats(scorer, seq) / M_LN2;
}

SailBound compression_bound_sail(const SailModel& model, const Vocabulary& vocab,
                                 const KnowledgeGraph& graph, std::uint64_t order_seed,
                                 std::uint64_t noise_seed) {
    const TokenSequence seq = linearize(graph, vocab, order_seed);
    const LatentDistribution dist = model.encode(graph, vocab);
    Rng rng(noise_seed);
    std::vector<real> noise(dist.mu.size());
    for (real& v : noise) v = static_cast<real>(rng.next_normal());
    SailScorer scorer(model, reparameterize(dist, noise));

    SailBound bound;
    bound.recon_bits = sequence_nll_nats(scorer, seq) / M_LN2;
    bound.kl_bits = kl_bits(dist);
    bound.bound_bits = bound.recon_bits + bound.kl_bits;
    return bound;
}

double mean_compression_ark(const ArkModel& model, const Vocabulary& vocab,
                            const std::vector<KnowledgeGraph>& graphs, std::uint64_t base_seed) {
    const int n = static_cast<int>(graphs.size());
    if (n == 0) return 0;
    std::vector<double> bits(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 64)
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(base_seed, {kCompressionTag, static_cast<std::uint64_t>(i)});
        bits[static_cast<std::size_t>(i)] =
            compression_ark(model, vocab, graphs[static_cast<std::size_t>(i)], rng.next_u64());
    }
    double sum = 0;
    for (double b : bits) sum += b;
    return sum / n;
}

SailBound mean_compression_bound_sail(const SailModel& model, const Vocabulary& vocab,
                                      const std::vector<KnowledgeGraph>& graphs,
                                      std::uint64_t base_seed) {
    const int n = static_cast<int>(graphs.size());
    SailBound mean;
    if (n == 0) return mean;
    std::vector<SailBound> bounds(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 64)
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(base_seed, {kCompressionTag, static_cast<std::uint64_t>(i)});
        const std::uint64_t order_seed = rng.next_u64();
        const std::uint64_t noise_seed = rng.next_u64();
        bounds[static_cast<std::size_t>(i)] = compression_bound_sail(
            model, vocab, graphs[static_cast<std::size_t>(i)], order_seed, noise_seed);
    }
    for (const SailBound& b : bounds) {
        mean.bound_bits += b.bound_bits;
        mean.recon_bits += b.recon_bits;
        mean.kl_bits += b.kl_bits;
    }
    mean.bound_bits /= n;
    mean.recon_bits /= n;
    mean.kl_bits /= n;
    return mean;
}

std::vector<std::pair<double, KnowledgeGraph>> interpolate(const SailModel& model,
                                                           const Vocabulary& vocab,
                                                           const KnowledgeGraph& g1,
                                                           const KnowledgeGraph& g2, int n_points,
                                                           const GenerationConfig& cfg) {
    const LatentDistribution d1 = model.encode(g1, vocab);
    const LatentDistribution d2 = model.encode(g2, vocab);
    std::vector<std::pair<double, KnowledgeGraph>> out;
    out.reserve(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        const double alpha = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
        std::vector<real> z(d1.mu.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
            z[j] = static_cast<real>((1 - alpha) * d1.mu[j] + alpha * d2.mu[j]);
        }
        out.emplace_back(alpha, decode_latent(model, vocab, z, cfg).graph);
    }
    return out;
}

SmoothnessReport smoothness_core(
    const std::function<KnowledgeGraph(const std::vector<real>&, int anchor, int step)>& decode,
    const std::vector<std::vector<real>>& anchor_mus, double epsilon, int n_steps,
    std::uint64_t seed) {
    SmoothnessReport report;
    report.n_anchors = static_cast<int>(anchor_mus.size());
    report.n_steps = n_steps;
    report.epsilon = epsilon;
    if (anchor_mus.empty() || n_steps < 1) return report;

    const int n_anchors = report.n_anchors;
    std::vector<double> local(static_cast<std::size_t>(n_anchors));
    std::vector<double> global(static_cast<std::size_t>(n_anchors));
    std::vector<double> flips(static_cast<std::size_t>(n_anchors));
    std::vector<double> basin(static_cast<std::size_t>(n_anchors));

#pragma omp parallel for schedule(dynamic)
    for (int a = 0; a < n_anchors; ++a) {
        const std::vector<real>& mu = anchor_mus[static_cast<std::size_t>(a)];
        Rng rng = Rng::stream(seed, {kWalkTag, static_cast<std::uint64_t>(a)});

        std::vector<real> z = mu;
        KnowledgeGraph anchor_decode = decode(z, a, 0);
        std::string prev_key = anchor_decode.canonical_key();
        KnowledgeGraph prev = anchor_decode;

        double local_sum = 0, global_sum = 0;
        int flip_count = 0;
        int step_runs = 0;  // runs among the n step decodes
        std::string run_key;
        for (int s = 1; s <= n_steps; ++s) {
            // uniform direction on the sphere: normalized standard normals
            std::vector<real> dir(z.size());
            real norm_sq = 0;
            for (real& v : dir) {
                v = static_cast<real>(rng.next_normal());
                norm_sq += v * v;
            }
            const real norm = std::sqrt(norm_sq);
            for (std::size_t j = 0; j < z.size(); ++j) {
                z[j] += static_cast<real>(epsilon) * (norm > 0 ? dir[j] / norm : 0);
            }
            const KnowledgeGraph cur = decode(z, a, s);
            const std::string key = cur.canonical_key();

            local_sum += jaccard(prev, cur);
            global_sum += jaccard(anchor_decode, cur);
            if (key != prev_key) ++flip_count;
            if (s == 1 || key != run_key) {
                ++step_runs;
                run_key = key;
            }
            prev = cur;
            prev_key = key;
        }
        local[static_cast<std::size_t>(a)] = local_sum / n_steps;
        global[static_cast<std::size_t>(a)] = global_sum / n_steps;
        flips[static_cast<std::size_t>(a)] = static_cast<double>(flip_count) / n_steps;
        basin[static_cast<std::size_t>(a)] = static_cast<double>(n_steps) / step_runs;
    }

    for (int a = 0; a < n_anchors; ++a) {
        report.local_smoothness += local[static_cast<std::size_t>(a)];
        report.global_consistency += global[static_cast<std::size_t>(a)];
        report.flip_rate += flips[static_cast<std::size_t>(a)];
        report.avg_basin_length += basin[static_cast<std::size_t>(a)];
    }
    report.local_smoothness /= n_anchors;
    report.global_consistency /= n_anchors;
    report.flip_rate /= n_anchors;
    report.avg_basin_length /= n_anchors;
    return report;
}

SmoothnessReport smoothness_metrics(const SailModel& model, const Vocabulary& vocab,
                                    const std::vector<KnowledgeGraph>& anchors, double epsilon,
                                    int n_steps, std::uint64_t seed, const GenerationConfig& cfg) {
    std::vector<std::vector<real>> mus;
    mus.reserve(anchors.size());
    for (const KnowledgeGraph& g : anchors) mus.push_back(model.encode(g, vocab).mu);
    const auto decode = [&](const std::vector<real>& z, int, int) {
        return decode_latent(model, vocab, z, cfg).graph;
    };
    return smoothness_core(decode, mus, epsilon, n_steps, seed);
}

std::string export_latents_csv(const SailModel& model, const Vocabulary& vocab,
                               const std::vector<KnowledgeGraph>& graphs,
                               const std::function<std::string(const KnowledgeGraph&)>* label_fn) {
    std::string out = "index,key_hash";
    for (int j = 0; j < model.d_z(); ++j) out += ",mu" + std::to_string(j);
    if (label_fn != nullptr) out += ",label";
    out += '\n';

    char buf[64];
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const LatentDistribution dist = model.encode(graphs[i], vocab);
        const std::string key = graphs[i].canonical_key();
        std::snprintf(buf, sizeof buf, "%zu,%016llx", i,
                      static_cast<unsigned long long>(fnv1a64(key.data(), key.size())));
        out += buf;
        for (real v : dist.mu) {
            std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(v));
            out += buf;
        }
        if (label_fn != nullptr) {
            out += ',';
            out += (*label_fn)(graphs[i]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace kgforge
