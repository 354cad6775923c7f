#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace dgr {

/// splitmix64 generator. std::mt19937 plus std::uniform_int_distribution is
/// implementation-defined, so seeded runs would not be reproducible across
/// standard libraries; this one is fixed by construction.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [-a, a].
    double uniform_sym(double a) { return (2.0 * next_double() - 1.0) * a; }

    /// Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
    uint64_t bounded(uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t t = (-n) % n;
            while (lo < t) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[bounded(i)]);
        }
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<size_t> sample_distinct(size_t n, size_t k);

  private:
    uint64_t state_;
};

uint64_t fnv1a64(std::string_view s);

/// Derives an independent stream from (seed, key), e.g. per-passage seeds.
uint64_t mix_seed(uint64_t seed, std::string_view key);
uint64_t mix_seed(uint64_t seed, uint64_t salt);

}  // namespace dgr
