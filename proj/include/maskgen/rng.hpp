#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace maskgen {

// SplitMix64 generator. Chosen over std::mt19937_64 because the whole
// generator + distribution pipeline is pinned here, byte for byte, on any
// platform; std distributions are not specified bit-exactly.
//
// Streams are derived by name so that independent roles (token sampling,
// Gumbel noise, masking) never share state. Sampling modes that skip a role
// still leave the other streams untouched, which is what makes e.g.
// mode=none and mode=self at s=0 produce identical outputs.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Warm up so that nearby seeds decorrelate immediately.
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1), both endpoints excluded; safe under log().
    double uniform_open() { return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52; }

    // (0, 1]
    double uniform_closed_top() { return 1.0 - uniform(); }

    // Unbiased integer in [0, n). Rejection sampling on the top bits.
    uint64_t uniform_int(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller without the cached spare; two draws per value keeps the
    // stream position independent of call history.
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double gumbel() { return -std::log(-std::log(uniform_open())); }

    // Partial Fisher-Yates: first k entries of a random permutation of [0, n).
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
        std::vector<uint32_t> idx(n);
        for (uint32_t i = 0; i < n; ++i) idx[i] = i;
        for (uint32_t i = 0; i < k && i + 1 < n; ++i) {
            const uint32_t j = i + static_cast<uint32_t>(uniform_int(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

private:
    uint64_t state_;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// Named substream derivation: mixes the master seed with a role tag and up to
// two indices. Deriving with the same arguments always yields the same value.
inline uint64_t derive_seed(uint64_t master, std::string_view role, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = fnv1a64(role);
    h ^= master + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= (a + 0x632be59bd9b4e019ull) * 0xff51afd7ed558ccdull;
    h ^= (b + 0xd6e8feb86659fd93ull) * 0xc4ceb9fe1a85ec53ull;
    return h;
}

inline Rng fork_rng(uint64_t master, std::string_view role, uint64_t a = 0, uint64_t b = 0) {
    return Rng(derive_seed(master, role, a, b));
}

} // namespace maskgen
