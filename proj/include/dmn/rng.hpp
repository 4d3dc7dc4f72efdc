#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dmn {

// Deterministic 64-bit generator (splitmix64). All shuffles, subsampling and
// weight initialization in this project draw from this generator so that runs
// are reproducible bit-for-bit across platforms. The exact update rule is
// documented in the README for reimplementation elsewhere.
class rng {
public:
    explicit rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Unbiased-enough bounded draw via 128-bit multiply (Lemire reduction
    // without the rejection loop; bias < 2^-64 per draw).
    std::uint64_t next_below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

    // Uniform in [0,1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; caches the second deviate.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// In-place Fisher-Yates, descending index variant: for i = n-1..1 swap
// v[i] with v[next_below(i+1)].
template <typename T>
void fisher_yates(std::vector<T>& v, rng& gen) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(gen.next_below(i + 1));
        std::swap(v[i], v[j]);
    }
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng gen(seed);
    fisher_yates(idx, gen);
    return idx;
}

}  // namespace dmn
