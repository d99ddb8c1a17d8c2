#pragma once

#include "maskgen/data_tokens.hpp"
#include "maskgen/rng.hpp"

#include <cstdint>
#include <vector>

namespace maskgen {

// Absorbing-state forward process: schedule, random masking, and the
// error-token corruption used by the adapter's auxiliary task.

// Convention follows the masking literature: 1 = unmasked, 0 = masked.
struct MaskState {
    std::vector<uint8_t> mask;
    int t = 0;
    int total_steps = 0;

    int n_masked() const {
        int n = 0;
        for (uint8_t m : mask)
            if (m == 0) ++n;
        return n;
    }
    int n_unmasked() const { return static_cast<int>(mask.size()) - n_masked(); }
};

struct CorruptionSpec {
    double error_rate = 0.3;  // in [0, 1)
    uint64_t seed = 0;
};

/// gamma(u) = sin(pi u / 2): monotone, gamma(0)=0, gamma(1)=1, cosine-family
// shape with full masking at t = T.
double mask_ratio(double u);

// Raw per-step count ceil(gamma(t/T) * N).
int mask_count(int t, int total_steps, int n);

// Full schedule n_T..n_0, clamped so it decreases strictly from N to 0
// (n_t <- min(n_t, n_{t+1} - 1)); guarantees every step unmasks at least one
// token. Requires total_steps <= N. Returned indexed by t in [0, T].
std::vector<int> mask_schedule(int total_steps, int n);

// Masks exactly n uniformly chosen positions of x0 (which must be mask-free).
std::pair<TokenGrid, MaskState> apply_random_mask(const TokenGrid& x0, int n, uint64_t seed);

// Each unmasked position is independently replaced, with probability
// error_rate, by a uniformly random wrong token. Masked positions untouched.
TokenGrid corrupt_with_errors(const TokenGrid& x_t, const MaskState& m, const CorruptionSpec& spec);

} // namespace maskgen
