#include "maskgen/mask_process.hpp"

#include "maskgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace maskgen {

double mask_ratio(double u) {
    if (u < 0.0 || u > 1.0) throw DomainError("mask_ratio: u must be in [0, 1]");
    return std::sin(1.5707963267948966 * u);
}

int mask_count(int t, int total_steps, int n) {
    if (total_steps < 1 || n < 1) throw DomainError("mask_count: T and N must be positive");
    if (t < 0 || t > total_steps) throw DomainError("mask_count: t out of [0, T]");
    return static_cast<int>(std::ceil(mask_ratio(static_cast<double>(t) / total_steps) * n));
}

std::vector<int> mask_schedule(int total_steps, int n) {
    if (total_steps < 1) throw DomainError("mask_schedule: T must be >= 1");
    if (total_steps > n)
        throw DomainError("mask_schedule: T=" + std::to_string(total_steps) + " exceeds N=" +
                          std::to_string(n) + "; a strictly decreasing schedule needs T <= N");
    std::vector<int> sched(total_steps + 1);
    sched[total_steps] = n;  // gamma(1) = 1
    for (int t = total_steps - 1; t >= 0; --t)
        sched[t] = std::min(mask_count(t, total_steps, n), sched[t + 1] - 1);
    // t=0 lands at 0 by construction: ceil(gamma(0) * n) = 0 and n_1 >= 1.
    return sched;
}

std::pair<TokenGrid, MaskState> apply_random_mask(const TokenGrid& x0, int n, uint64_t seed) {
    const int total = x0.n();
    if (n < 0 || n > total) throw DomainError("apply_random_mask: n out of [0, N]");
    if (x0.has_mask()) throw ContractError("apply_random_mask: x0 already contains MASK");

    TokenGrid xt = x0;
    MaskState m;
    m.mask.assign(static_cast<size_t>(total), 1);
    Rng rng(seed);
    for (uint32_t pos : rng.sample_without_replacement(static_cast<uint32_t>(total),
                                                      static_cast<uint32_t>(n))) {
        xt.tokens[pos] = x0.mask_id();
        m.mask[pos] = 0;
    }
    return {std::move(xt), std::move(m)};
}

TokenGrid corrupt_with_errors(const TokenGrid& x_t, const MaskState& m, const CorruptionSpec& spec) {
    if (m.mask.size() != x_t.tokens.size()) throw ContractError("corrupt_with_errors: mask/grid length mismatch");
    for (size_t i = 0; i < x_t.tokens.size(); ++i)
        if ((x_t.tokens[i] == x_t.mask_id()) != (m.mask[i] == 0))
            throw ContractError("corrupt_with_errors: x_t inconsistent with mask state");
    if (spec.error_rate < 0.0 || spec.error_rate >= 1.0)
        throw DomainError("corrupt_with_errors: error_rate must be in [0, 1)");
    if (x_t.k < 2) throw ConfigError("corrupt_with_errors: need k >= 2 for a wrong token to exist");

    TokenGrid z = x_t;
    Rng rng(spec.seed);
    for (size_t i = 0; i < z.tokens.size(); ++i) {
        if (m.mask[i] == 0) continue;  // masked positions untouched
        if (rng.uniform() >= spec.error_rate) continue;
        // uniform over [0, k-1] minus the current token
        const int32_t cur = z.tokens[i];
        int32_t repl = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(x_t.k - 1)));
        if (repl >= cur) ++repl;
        z.tokens[i] = repl;
    }
    return z;
}

} // namespace maskgen
