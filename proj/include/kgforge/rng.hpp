#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kgforge {

// Deterministic random stream. Distribution code is hand-rolled on top of
// std::mt19937_64 because the standard pins the engine but not the
// distributions; this keeps every sampled artifact reproducible across
// compilers. Independent substreams are derived by hashing a path of
// indices into the root seed, so (seed, epoch, graph) style fan-out never
// shares state.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Substream for (root, path...), e.g. Rng::stream(seed, {epoch, graph_idx}).
    static Rng stream(std::uint64_t root, std::initializer_list<std::uint64_t> path);

    std::uint64_t next_u64();

    // Uniform in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double();

    // Standard normal via Box-Muller; second value of each pair is cached.
    double next_normal();

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n) in draw order.
    std::vector<int> sample_without_replacement(int n, int k);

  private:
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// SplitMix64 finalizer; also used wherever a stable 64-bit hash is needed.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over bytes; stable across platforms (used for exported key hashes).
std::uint64_t fnv1a64(const void* data, std::size_t len);

}  // namespace kgforge
