#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskgen/error.hpp"
#include "maskgen/mask_process.hpp"

#include <cmath>
#include <set>

using namespace maskgen;

namespace {

TokenGrid grid4x4(int k = 8) {
    TokenGrid g;
    g.rows = 4;
    g.cols = 4;
    g.k = k;
    g.tokens.resize(16);
    for (int i = 0; i < 16; ++i) g.tokens[i] = i % k;
    return g;
}

} // namespace

TEST_CASE("mask ratio worked values") {
    CHECK(mask_ratio(0.0) == doctest::Approx(0.0));
    CHECK(mask_ratio(1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mask_ratio(0.5) == doctest::Approx(0.7071067811865476).epsilon(1e-12));
    for (int i = 1; i <= 10; ++i)
        CHECK(mask_ratio(i / 10.0) > mask_ratio((i - 1) / 10.0));
}

TEST_CASE("raw mask count worked value") {
    CHECK(mask_count(9, 18, 64) == 46);  // ceil(sin(pi 9/36) * 64)
    CHECK(mask_count(18, 18, 64) == 64);
    CHECK(mask_count(0, 18, 64) == 0);
}

TEST_CASE("schedule decreases strictly from N to 0 and unmask counts sum to N") {
    for (auto [T, N] : {std::pair{18, 64}, {8, 16}, {16, 16}, {1, 5}, {64, 64}}) {
        auto sched = mask_schedule(T, N);
        REQUIRE((int)sched.size() == T + 1);
        CHECK(sched[T] == N);
        CHECK(sched[0] == 0);
        int total = 0;
        for (int t = T; t >= 1; --t) {
            CHECK(sched[t] > sched[t - 1]);
            total += sched[t] - sched[t - 1];
        }
        CHECK(total == N);
    }
    CHECK_THROWS_AS(mask_schedule(17, 16), DomainError);
    CHECK_THROWS_AS(mask_schedule(0, 16), DomainError);
}

TEST_CASE("random masking masks exactly n positions with the mask token") {
    TokenGrid x0 = grid4x4();
    for (int n : {0, 1, 7, 16}) {
        auto [xt, st] = apply_random_mask(x0, n, 99);
        CHECK(st.n_masked() == n);
        CHECK(st.n_unmasked() == 16 - n);
        int masked_tokens = 0;
        for (int i = 0; i < 16; ++i) {
            if (st.mask[i] == 0) {
                CHECK(xt.tokens[i] == x0.mask_id());
                ++masked_tokens;
            } else {
                CHECK(xt.tokens[i] == x0.tokens[i]);
            }
        }
        CHECK(masked_tokens == n);
    }

    auto [a1, s1] = apply_random_mask(x0, 5, 42);
    auto [a2, s2] = apply_random_mask(x0, 5, 42);
    CHECK(a1.tokens == a2.tokens);
    auto [a3, s3] = apply_random_mask(x0, 5, 43);
    bool same = a1.tokens == a3.tokens;
    CHECK_FALSE(same);

    CHECK_THROWS_AS(apply_random_mask(x0, 17, 0), DomainError);
    CHECK_THROWS_AS(apply_random_mask(x0, -1, 0), DomainError);
    TokenGrid with_mask = grid4x4();
    with_mask.tokens[3] = with_mask.mask_id();
    CHECK_THROWS_AS(apply_random_mask(with_mask, 2, 0), ContractError);
}

TEST_CASE("masking position choice is uniform-ish across seeds") {
    TokenGrid x0 = grid4x4();
    std::vector<int> hits(16, 0);
    const int trials = 4000;
    for (int s = 0; s < trials; ++s) {
        auto [xt, st] = apply_random_mask(x0, 4, 1000 + s);
        for (int i = 0; i < 16; ++i)
            if (st.mask[i] == 0) ++hits[i];
    }
    for (int i = 0; i < 16; ++i) {
        double freq = hits[i] / (double)trials;
        CHECK(freq == doctest::Approx(0.25).epsilon(0.15));
    }
}

TEST_CASE("error corruption touches only unmasked positions and never reuses the original") {
    TokenGrid x0 = grid4x4();
    auto [xt, st] = apply_random_mask(x0, 6, 5);

    TokenGrid same = corrupt_with_errors(xt, st, {0.0, 11});
    CHECK(same.tokens == xt.tokens);

    TokenGrid hot = corrupt_with_errors(xt, st, {0.999, 11});
    int changed = 0;
    for (int i = 0; i < 16; ++i) {
        if (st.mask[i] == 0) {
            CHECK(hot.tokens[i] == x0.mask_id());
        } else {
            CHECK(hot.tokens[i] != x0.mask_id());
            if (hot.tokens[i] != xt.tokens[i]) {
                ++changed;
                CHECK(hot.tokens[i] >= 0);
                CHECK(hot.tokens[i] < x0.k);
            }
        }
    }
    CHECK(changed >= 8);  // 10 unmasked, rate ~1

    TokenGrid d1 = corrupt_with_errors(xt, st, {0.5, 21});
    TokenGrid d2 = corrupt_with_errors(xt, st, {0.5, 21});
    CHECK(d1.tokens == d2.tokens);

    // an inconsistent pair (mask says unmasked but token is MASK) is rejected
    MaskState bad = st;
    for (auto& m : bad.mask) m = 1;
    CHECK_THROWS_AS(corrupt_with_errors(xt, bad, {0.3, 0}), ContractError);
}

TEST_CASE("corruption rate is honored in expectation") {
    TokenGrid x0 = grid4x4();
    MaskState all_on;
    all_on.mask.assign(16, 1);
    int replaced = 0;
    const int trials = 2000;
    for (int s = 0; s < trials; ++s) {
        TokenGrid z = corrupt_with_errors(x0, all_on, {0.3, (uint64_t)s});
        for (int i = 0; i < 16; ++i)
            if (z.tokens[i] != x0.tokens[i]) ++replaced;
    }
    double rate = replaced / (16.0 * trials);
    CHECK(rate == doctest::Approx(0.3).epsilon(0.05));
}
