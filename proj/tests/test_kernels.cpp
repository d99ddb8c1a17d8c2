#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskgen/kernels.hpp"
#include "maskgen/rng.hpp"

#include <cmath>
#include <cstring>
#include <vector>

using namespace maskgen;
namespace K = maskgen::kernels;

namespace {

std::vector<double> randu(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("matmul_nt matches the naive triple loop") {
    Rng rng(11);
    const int M = 7, N = 5, Kd = 9;
    auto a = randu(rng, M * Kd), b = randu(rng, N * Kd);
    std::vector<double> out(M * N), ref(M * N);
    K::matmul_nt(out.data(), a.data(), b.data(), M, N, Kd);
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
            double s = 0;
            for (int k = 0; k < Kd; ++k) s += a[m * Kd + k] * b[n * Kd + k];
            ref[m * N + n] = s;
        }
    for (int i = 0; i < M * N; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("matmul_nn matches the naive triple loop") {
    Rng rng(12);
    const int M = 4, N = 6, Kd = 3;
    auto a = randu(rng, M * Kd), b = randu(rng, Kd * N);
    std::vector<double> out(M * N), ref(M * N);
    K::matmul_nn(out.data(), a.data(), b.data(), M, N, Kd);
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
            double s = 0;
            for (int k = 0; k < Kd; ++k) s += a[m * Kd + k] * b[k * N + n];
            ref[m * N + n] = s;
        }
    for (int i = 0; i < M * N; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("matmul_tn_acc accumulates a^T b") {
    Rng rng(13);
    const int M = 5, N = 4, Kd = 3;  // a: [M, Kd], b: [M, N], out: [Kd, N]
    auto a = randu(rng, M * Kd), b = randu(rng, M * N);
    std::vector<double> out(Kd * N, 0.5), ref(Kd * N, 0.5);
    K::matmul_tn_acc(out.data(), a.data(), b.data(), M, N, Kd);
    for (int k = 0; k < Kd; ++k)
        for (int n = 0; n < N; ++n) {
            double s = 0;
            for (int m = 0; m < M; ++m) s += a[m * Kd + k] * b[m * N + n];
            ref[k * N + n] += s;
        }
    for (int i = 0; i < Kd * N; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("bias kernels add and reduce over rows") {
    std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> bias = {10, 20};
    K::add_bias(x.data(), bias.data(), 2, 2);
    CHECK(x == std::vector<double>{11, 22, 13, 24});

    std::vector<double> bg(2, 1.0);
    std::vector<double> dy = {1, 2, 3, 4};
    K::bias_grad_acc(bg.data(), dy.data(), 2, 2);
    CHECK(bg[0] == doctest::Approx(5.0));
    CHECK(bg[1] == doctest::Approx(7.0));
}

TEST_CASE("layernorm_fwd normalizes each row") {
    Rng rng(14);
    const int rows = 3, cols = 8;
    auto x = randu(rng, rows * cols, -2, 2);
    std::vector<double> g(cols, 1.0), b(cols, 0.0);
    std::vector<double> y(rows * cols), mean(rows), rstd(rows);
    K::layernorm_fwd(y.data(), mean.data(), rstd.data(), x.data(), g.data(), b.data(), rows, cols);
    for (int r = 0; r < rows; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < cols; ++c) m += y[r * cols + c];
        m /= cols;
        for (int c = 0; c < cols; ++c) v += (y[r * cols + c] - m) * (y[r * cols + c] - m);
        v /= cols;
        CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));  // off by the stabilizing epsilon
    }
}

TEST_CASE("layernorm_bwd matches finite differences") {
    Rng rng(15);
    const int rows = 2, cols = 5;
    auto x = randu(rng, rows * cols);
    auto g = randu(rng, cols, 0.5, 1.5);
    auto b = randu(rng, cols);
    auto dy = randu(rng, rows * cols);

    std::vector<double> y(rows * cols), mean(rows), rstd(rows);
    std::vector<double> dx(rows * cols, 0), dg(cols, 0), db(cols, 0);
    K::layernorm_fwd(y.data(), mean.data(), rstd.data(), x.data(), g.data(), b.data(), rows, cols);
    K::layernorm_bwd(dx.data(), dg.data(), db.data(), dy.data(), x.data(), g.data(), mean.data(),
                     rstd.data(), rows, cols);

    auto loss = [&](const std::vector<double>& xv, const std::vector<double>& gv,
                    const std::vector<double>& bv) {
        std::vector<double> yy(rows * cols), mm(rows), rr(rows);
        K::layernorm_fwd(yy.data(), mm.data(), rr.data(), xv.data(), gv.data(), bv.data(), rows,
                         cols);
        double s = 0;
        for (int i = 0; i < rows * cols; ++i) s += dy[i] * yy[i];
        return s;
    };
    const double h = 1e-6;
    for (int i = 0; i < rows * cols; ++i) {
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        double num = (loss(xp, g, b) - loss(xm, g, b)) / (2 * h);
        CHECK(dx[i] == doctest::Approx(num).epsilon(1e-5));
    }
    for (int c = 0; c < cols; ++c) {
        auto gp = g, gm = g;
        gp[c] += h;
        gm[c] -= h;
        double num = (loss(x, gp, b) - loss(x, gm, b)) / (2 * h);
        CHECK(dg[c] == doctest::Approx(num).epsilon(1e-5));
        auto bp = b, bm = b;
        bp[c] += h;
        bm[c] -= h;
        num = (loss(x, g, bp) - loss(x, g, bm)) / (2 * h);
        CHECK(db[c] == doctest::Approx(num).epsilon(1e-5));
    }
}

TEST_CASE("gelu matches its definition and accumulates dx") {
    std::vector<double> x = {0.0, 1.0, -1.0, 2.5};
    std::vector<double> y(4);
    K::gelu_fwd(y.data(), x.data(), 4);
    CHECK(y[0] == 0.0);
    // tanh approximation at x=1: 0.5 * (1 + tanh(sqrt(2/pi) (1 + 0.044715)))
    double t = std::tanh(std::sqrt(2.0 / M_PI) * (1.0 + 0.044715));
    CHECK(y[1] == doctest::Approx(0.5 * (1 + t)).epsilon(1e-12));

    std::vector<double> dy = {1, 1, 1, 1}, dx(4, 0.25);
    K::gelu_bwd(dx.data(), dy.data(), x.data(), 4);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
        double yp, ym, xp = x[i] + h, xm = x[i] - h;
        K::gelu_fwd(&yp, &xp, 1);
        K::gelu_fwd(&ym, &xm, 1);
        CHECK(dx[i] - 0.25 == doctest::Approx((yp - ym) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("softmax_rows worked value") {
    std::vector<double> x = {0, 1, 2};
    std::vector<double> y(3);
    K::softmax_rows(y.data(), x.data(), 1, 3);
    CHECK(y[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.24472847105479764).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(0.6652409557748219).epsilon(1e-12));
    CHECK(y[0] + y[1] + y[2] == doctest::Approx(1.0).epsilon(1e-12));

    // alias-safe: y == x buffer
    std::vector<double> z = {0, 1, 2};
    K::softmax_rows(z.data(), z.data(), 1, 3);
    CHECK(z[1] == doctest::Approx(y[1]).epsilon(1e-15));
}

TEST_CASE("log_softmax_rows is consistent with softmax") {
    Rng rng(16);
    auto x = randu(rng, 2 * 7, -3, 3);
    std::vector<double> p(2 * 7), lp(2 * 7);
    K::softmax_rows(p.data(), x.data(), 2, 7);
    K::log_softmax_rows(lp.data(), x.data(), 2, 7);
    for (int i = 0; i < 2 * 7; ++i) CHECK(lp[i] == doctest::Approx(std::log(p[i])).epsilon(1e-10));
}

TEST_CASE("conv3x3 forward matches the naive loop and backward matches finite differences") {
    Rng rng(17);
    const int cin = 2, cout = 3, h = 4, w = 5;
    auto x = randu(rng, cin * h * w);
    auto wt = randu(rng, cout * cin * 9, -0.5, 0.5);
    auto bias = randu(rng, cout);
    std::vector<double> y(cout * h * w);
    K::conv3x3_fwd(y.data(), x.data(), wt.data(), bias.data(), cin, cout, h, w);

    for (int co = 0; co < cout; ++co)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double s = bias[co];
                for (int ci = 0; ci < cin; ++ci)
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            int ii = i + di, jj = j + dj;
                            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                            s += x[(ci * h + ii) * w + jj] *
                                 wt[((co * cin + ci) * 3 + (di + 1)) * 3 + (dj + 1)];
                        }
                CHECK(y[(co * h + i) * w + j] == doctest::Approx(s).epsilon(1e-12));
            }

    auto dy = randu(rng, cout * h * w);
    std::vector<double> dx(cin * h * w, 0), dw(cout * cin * 9, 0), db(cout, 0);
    K::conv3x3_bwd(dx.data(), dw.data(), db.data(), dy.data(), x.data(), wt.data(), cin, cout, h, w);
    auto loss = [&](const std::vector<double>& xv, const std::vector<double>& wv,
                    const std::vector<double>& bv) {
        std::vector<double> yy(cout * h * w);
        K::conv3x3_fwd(yy.data(), xv.data(), wv.data(), bv.data(), cin, cout, h, w);
        double s = 0;
        for (size_t i = 0; i < yy.size(); ++i) s += dy[i] * yy[i];
        return s;
    };
    const double hh = 1e-6;
    Rng pick(18);
    for (int trial = 0; trial < 20; ++trial) {
        int i = (int)pick.uniform_int((uint32_t)x.size());
        auto xp = x, xm = x;
        xp[i] += hh;
        xm[i] -= hh;
        CHECK(dx[i] == doctest::Approx((loss(xp, wt, bias) - loss(xm, wt, bias)) / (2 * hh))
                           .epsilon(1e-5));
        int k = (int)pick.uniform_int((uint32_t)wt.size());
        auto wp = wt, wm = wt;
        wp[k] += hh;
        wm[k] -= hh;
        CHECK(dw[k] == doctest::Approx((loss(x, wp, bias) - loss(x, wm, bias)) / (2 * hh))
                           .epsilon(1e-5));
    }
    for (int co = 0; co < cout; ++co) {
        auto bp = bias, bm = bias;
        bp[co] += hh;
        bm[co] -= hh;
        CHECK(db[co] == doctest::Approx((loss(x, wt, bp) - loss(x, wt, bm)) / (2 * hh))
                            .epsilon(1e-5));
    }
}

TEST_CASE("avgpool2 forward/backward") {
    // one channel, 2x4: two pooled cells
    std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<double> y(2);
    K::avgpool2_fwd(y.data(), x.data(), 1, 2, 4);
    CHECK(y[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
    CHECK(y[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));

    std::vector<double> dy = {4, 8}, dx(8, 1.0);
    K::avgpool2_bwd(dx.data(), dy.data(), 1, 2, 4);
    CHECK(dx[0] == doctest::Approx(2.0));  // 1 + 4/4
    CHECK(dx[2] == doctest::Approx(3.0));  // 1 + 8/4
}

TEST_CASE("gaussian blur: identity at sigma 0, constants preserved, symmetric spread") {
    Rng rng(19);
    const int rows = 4, cols = 5, ch = 3;
    auto data = randu(rng, rows * cols * ch);
    auto copy = data;
    K::gaussian_blur_grid(data.data(), rows, cols, ch, 0.0);
    CHECK(bitwise_equal(data, copy));

    std::vector<double> flat(rows * cols * ch, 0.7);
    K::gaussian_blur_grid(flat.data(), rows, cols, ch, 1.3);
    for (double v : flat) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

    // centered impulse on an odd grid spreads symmetrically
    std::vector<double> imp(5 * 5, 0.0);
    imp[2 * 5 + 2] = 1.0;
    K::gaussian_blur_grid(imp.data(), 5, 5, 1, 0.8);
    CHECK(imp[2 * 5 + 1] == doctest::Approx(imp[2 * 5 + 3]).epsilon(1e-12));
    CHECK(imp[1 * 5 + 2] == doctest::Approx(imp[3 * 5 + 2]).epsilon(1e-12));
    CHECK(imp[2 * 5 + 2] > imp[2 * 5 + 1]);
}

TEST_CASE("nearest centroid ties break to the lower index") {
    std::vector<float> cents = {0.f, 0.f, 1.f, 1.f, 0.f, 0.f};  // centroid 2 duplicates 0
    std::vector<float> v = {0.1f, -0.1f};
    CHECK(K::nearest_centroid(v.data(), cents.data(), 3, 2) == 0);

    std::vector<float> pts = {0.f, 0.f, 1.f, 1.f};
    std::vector<int> idx(2);
    std::vector<float> d2(2);
    K::assign_nearest(pts.data(), 2, cents.data(), 3, 2, idx.data(), d2.data());
    CHECK(idx[0] == 0);
    CHECK(idx[1] == 1);
    CHECK(d2[0] == doctest::Approx(0.0));
    K::assign_nearest(pts.data(), 2, cents.data(), 3, 2, nullptr, d2.data());
    K::assign_nearest(pts.data(), 2, cents.data(), 3, 2, idx.data(), nullptr);
}

TEST_CASE("pairwise_dist2") {
    std::vector<double> a = {0, 0, 1, 0};
    std::vector<double> b = {0, 1, 3, 4};
    std::vector<double> out(4);
    K::pairwise_dist2(out.data(), a.data(), 2, b.data(), 2, 2);
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(25.0));
    CHECK(out[2] == doctest::Approx(2.0));
    CHECK(out[3] == doctest::Approx(20.0));
}

TEST_CASE("parallel kernels are bit-identical to the serial references") {
    Rng rng(20);
    const int M = 13, N = 11, Kd = 17;
    auto a = randu(rng, M * Kd), bT = randu(rng, N * Kd), b = randu(rng, Kd * N);

    std::vector<double> p1(M * N), s1(M * N);
    K::matmul_nt(p1.data(), a.data(), bT.data(), M, N, Kd);
    K::serial::matmul_nt(s1.data(), a.data(), bT.data(), M, N, Kd);
    CHECK(bitwise_equal(p1, s1));

    K::matmul_nn(p1.data(), a.data(), b.data(), M, N, Kd);
    K::serial::matmul_nn(s1.data(), a.data(), b.data(), M, N, Kd);
    CHECK(bitwise_equal(p1, s1));

    auto c = randu(rng, M * N);
    std::vector<double> p2(Kd * N, 0.0), s2(Kd * N, 0.0);
    K::matmul_tn_acc(p2.data(), a.data(), c.data(), M, N, Kd);
    K::serial::matmul_tn_acc(s2.data(), a.data(), c.data(), M, N, Kd);
    CHECK(bitwise_equal(p2, s2));

    auto x = randu(rng, 9 * 32);
    std::vector<double> g(32, 1.1), bb(32, 0.1);
    std::vector<double> yp(9 * 32), ys(9 * 32), mp(9), ms(9), rp(9), rs(9);
    K::layernorm_fwd(yp.data(), mp.data(), rp.data(), x.data(), g.data(), bb.data(), 9, 32);
    K::serial::layernorm_fwd(ys.data(), ms.data(), rs.data(), x.data(), g.data(), bb.data(), 9, 32);
    CHECK(bitwise_equal(yp, ys));

    std::vector<double> gp(x.size()), gs(x.size());
    K::gelu_fwd(gp.data(), x.data(), x.size());
    K::serial::gelu_fwd(gs.data(), x.data(), x.size());
    CHECK(bitwise_equal(gp, gs));

    std::vector<double> smp(9 * 32), sms(9 * 32);
    K::softmax_rows(smp.data(), x.data(), 9, 32);
    K::serial::softmax_rows(sms.data(), x.data(), 9, 32);
    CHECK(bitwise_equal(smp, sms));

    const int cin = 3, cout = 4, h = 6, w = 6;
    auto cx = randu(rng, cin * h * w);
    auto cw = randu(rng, cout * cin * 9);
    auto cb = randu(rng, cout);
    std::vector<double> cyp(cout * h * w), cys(cout * h * w);
    K::conv3x3_fwd(cyp.data(), cx.data(), cw.data(), cb.data(), cin, cout, h, w);
    K::serial::conv3x3_fwd(cys.data(), cx.data(), cw.data(), cb.data(), cin, cout, h, w);
    CHECK(bitwise_equal(cyp, cys));

    auto blur_p = randu(rng, 8 * 8 * 5);
    auto blur_s = blur_p;
    K::gaussian_blur_grid(blur_p.data(), 8, 8, 5, 1.7);
    K::serial::gaussian_blur_grid(blur_s.data(), 8, 8, 5, 1.7);
    CHECK(bitwise_equal(blur_p, blur_s));

    std::vector<float> pts(50 * 7), cents(6 * 7);
    for (auto& v : pts) v = (float)rng.uniform();
    for (auto& v : cents) v = (float)rng.uniform();
    std::vector<int> ip(50), is(50);
    std::vector<float> dp(50), ds(50);
    K::assign_nearest(pts.data(), 50, cents.data(), 6, 7, ip.data(), dp.data());
    K::serial::assign_nearest(pts.data(), 50, cents.data(), 6, 7, is.data(), ds.data());
    CHECK(ip == is);
    CHECK(std::memcmp(dp.data(), ds.data(), dp.size() * sizeof(float)) == 0);

    auto pa = randu(rng, 12 * 5), pb = randu(rng, 9 * 5);
    std::vector<double> pdp(12 * 9), pds(12 * 9);
    K::pairwise_dist2(pdp.data(), pa.data(), 12, pb.data(), 9, 5);
    K::serial::pairwise_dist2(pds.data(), pa.data(), 12, pb.data(), 9, 5);
    CHECK(bitwise_equal(pdp, pds));
}
