#include "dgr/rng.hpp"

namespace dgr {

std::vector<size_t> Rng::sample_distinct(size_t n, size_t k) {
    // Partial Fisher-Yates over an index vector.
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + bounded(n - i);
        std::swap(idx[i], idx[j]);
        out.push_back(idx[i]);
    }
    return out;
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t mix_seed(uint64_t seed, std::string_view key) {
    return mix_seed(seed, fnv1a64(key));
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    Rng r(seed ^ (salt + 0x9e3779b97f4a7c15ULL));
    return r.next_u64();
}

}  // namespace dgr
