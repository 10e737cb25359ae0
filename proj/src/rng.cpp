#include "kgforge/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace kgforge {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

Rng Rng::stream(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(root);
    for (std::uint64_t p : path) {
        s = mix64(s ^ mix64(p));
    }
    return Rng(s);
}

std::uint64_t Rng::next_u64() {
    return engine_();
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("next_below: bound must be positive");
    }
    // Rejection sampling on the top of the range keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    double u1;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_normal_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    if (k > n) {
        throw std::invalid_argument("sample_without_replacement: k > n");
    }
    // Partial Fisher-Yates over an index pool.
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(i) +
                       static_cast<std::size_t>(next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace kgforge
