#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskgen/error.hpp"
#include "maskgen/generator.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

using namespace maskgen;

namespace {

GeneratorConfig micro_config() {
    GeneratorConfig c;
    c.layers = 2;
    c.dim = 16;
    c.heads = 2;
    c.vocab_k = 8;
    c.n_tokens = 8;
    c.classes = 2;
    c.dropout = 0.0;
    return c;
}

TokenGrid micro_grid(uint64_t seed, int k = 8) {
    TokenGrid g;
    g.rows = 2;
    g.cols = 4;
    g.k = k;
    g.tokens.resize(8);
    Rng rng(seed);
    for (auto& t : g.tokens) t = (int32_t)rng.uniform_int((uint32_t)k);
    return g;
}

bool map_equal(const TensorMap& a, const TensorMap& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second.shape != t.shape) return false;
        if (std::memcmp(t.data.data(), it->second.data.data(), t.data.size() * sizeof(double)))
            return false;
    }
    return true;
}

double lse(const double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    return mx + std::log(s);
}

} // namespace

TEST_CASE("parameter count matches the allocated tensors") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 1);
    int64_t total = 0;
    for (const auto& [name, t] : params) total += (int64_t)t.numel();
    CHECK(total == generator_param_count(cfg));

    TensorMap again = init_generator_params(cfg, 1);
    CHECK(map_equal(params, again));
    TensorMap other = init_generator_params(cfg, 2);
    CHECK_FALSE(map_equal(params, other));
}

TEST_CASE("forward emits per-position vocabulary logits conditioned on the class token") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 3);
    TokenGrid x = micro_grid(5);
    ForwardOutput out = forward(cfg, params, x, 0);
    REQUIRE(out.logits.shape == std::vector<int64_t>{8, 8});
    REQUIRE((int)out.hidden.size() == cfg.layers + 1);
    CHECK(out.hidden[0].shape == std::vector<int64_t>{9, 16});
    for (double v : out.logits.data) CHECK(std::isfinite(v));

    ForwardOutput других = forward(cfg, params, x, 1);
    ForwardOutput null_class = forward(cfg, params, x, cfg.classes);
    bool differs_by_class = false, differs_from_null = false;
    for (size_t i = 0; i < out.logits.data.size(); ++i) {
        differs_by_class |= out.logits.data[i] != других.logits.data[i];
        differs_from_null |= out.logits.data[i] != null_class.logits.data[i];
    }
    CHECK(differs_by_class);
    CHECK(differs_from_null);

    // MASK tokens are valid input
    TokenGrid masked = x;
    masked.tokens[3] = masked.mask_id();
    ForwardOutput mo = forward(cfg, params, masked, 0);
    for (double v : mo.logits.data) CHECK(std::isfinite(v));
}

TEST_CASE("masked loss averages the NLL over masked positions only") {
    TokenGrid x0 = micro_grid(7, 4);
    x0.k = 4;
    for (auto& t : x0.tokens) t &= 3;
    MaskState m;
    m.mask = {0, 1, 1, 0, 1, 1, 1, 1};  // positions 0 and 3 masked

    Tensor logits({8, 4});
    Rng rng(9);
    for (auto& v : logits.data) v = 2.0 * rng.uniform() - 1.0;

    double expected = 0.0;
    for (int i : {0, 3}) {
        const double* row = logits.ptr() + i * 4;
        expected += lse(row, 4) - row[x0.tokens[i]];
    }
    expected /= 2.0;
    CHECK(masked_loss(logits, x0, m) == doctest::Approx(expected).epsilon(1e-12));

    // logits at unmasked positions are irrelevant, bit for bit
    Tensor tampered = logits;
    for (int i : {1, 2, 4, 5, 6, 7})
        for (int k = 0; k < 4; ++k) tampered.data[i * 4 + k] += 100.0 * rng.uniform();
    CHECK(masked_loss(tampered, x0, m) == masked_loss(logits, x0, m));

    // uniform logits give ln K
    Tensor flat({8, 4});
    CHECK(masked_loss(flat, x0, m) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("masked_loss_grad matches finite differences") {
    TokenGrid x0 = micro_grid(11, 4);
    x0.k = 4;
    for (auto& t : x0.tokens) t &= 3;
    MaskState m;
    m.mask = {0, 1, 0, 1, 0, 1, 0, 1};
    Tensor logits({8, 4});
    Rng rng(13);
    for (auto& v : logits.data) v = rng.normal();

    Tensor dl;
    masked_loss_grad(logits, x0, m, dl);
    REQUIRE(dl.shape == logits.shape);
    const double h = 1e-6;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        Tensor p = logits, q = logits;
        p.data[i] += h;
        q.data[i] -= h;
        double num = (masked_loss(p, x0, m) - masked_loss(q, x0, m)) / (2 * h);
        CHECK(dl.data[i] == doctest::Approx(num).epsilon(1e-5));
    }
}

TEST_CASE("analytic gradients match central differences on every tensor") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 17);
    TokenGrid x0 = micro_grid(19);
    auto [xt, m] = apply_random_mask(x0, 4, 23);

    Feedback fb(cfg.layers);
    Rng frng(29);
    for (auto& f : fb) {
        f = Tensor({cfg.seq(), cfg.dim});
        for (auto& v : f.data) v = 0.1 * frng.normal();
    }

    TensorMap grads = zeros_like(params);
    Feedback dfb;
    loss_and_grads(cfg, params, xt, 0, x0, m, &grads, &fb, &dfb);

    auto loss_at = [&](const TensorMap& p, const Feedback& f) {
        return loss_and_grads(cfg, p, xt, 0, x0, m, nullptr, &f, nullptr);
    };

    const double h = 1e-5;
    int checked = 0;
    Rng pick(31);
    for (const auto& [name, t] : params) {
        for (int rep = 0; rep < 3; ++rep) {
            size_t i = pick.uniform_int((uint32_t)t.numel());
            TensorMap p = params;
            at(p, name).data[i] += h;
            double lp = loss_at(p, fb);
            at(p, name).data[i] -= 2 * h;
            double lm = loss_at(p, fb);
            double num = (lp - lm) / (2 * h);
            double ana = grads.at(name).data[i];
            double denom = std::max(1e-6, std::abs(num) + std::abs(ana));
            INFO(name << "[" << i << "] analytic " << ana << " numeric " << num);
            CHECK(std::abs(num - ana) / denom <= 1e-3);
            ++checked;
        }
    }
    CHECK(checked >= 100);

    // gradient w.r.t. the injected feedback signals
    REQUIRE((int)dfb.size() == cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        for (int rep = 0; rep < 8; ++rep) {
            size_t i = pick.uniform_int((uint32_t)fb[l].numel());
            Feedback f2 = fb;
            f2[l].data[i] += h;
            double lp = loss_at(params, f2);
            f2[l].data[i] -= 2 * h;
            double lm = loss_at(params, f2);
            double num = (lp - lm) / (2 * h);
            double ana = dfb[l].data[i];
            double denom = std::max(1e-6, std::abs(num) + std::abs(ana));
            CHECK(std::abs(num - ana) / denom <= 1e-3);
        }
    }
}

TEST_CASE("token positions are equivariant under permutation") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 37);
    TokenGrid x = micro_grid(41);
    ForwardOutput base = forward(cfg, params, x, 1);

    std::vector<int> perm = {3, 1, 7, 0, 5, 2, 6, 4};
    TokenGrid px = x;
    TensorMap pparams = params;
    Tensor& pe = at(pparams, "pos_emb");
    const Tensor& pe0 = params.at("pos_emb");
    for (int i = 0; i < 8; ++i) {
        px.tokens[i] = x.tokens[perm[i]];
        std::memcpy(pe.ptr() + (size_t)(1 + i) * cfg.dim, pe0.ptr() + (size_t)(1 + perm[i]) * cfg.dim,
                    cfg.dim * sizeof(double));
    }
    ForwardOutput permuted = forward(cfg, pparams, px, 1);
    for (int i = 0; i < 8; ++i)
        for (int k = 0; k < cfg.vocab_k; ++k)
            CHECK(permuted.logits.data[i * cfg.vocab_k + k] ==
                  doctest::Approx(base.logits.data[perm[i] * cfg.vocab_k + k]).epsilon(1e-9));
}

TEST_CASE("zero feedback is a bitwise no-op, nonzero feedback is not") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 43);
    TokenGrid x = micro_grid(47);

    Feedback zero(cfg.layers);
    for (auto& f : zero) f = Tensor({cfg.seq(), cfg.dim});
    ForwardOutput plain = forward(cfg, params, x, 0);
    ForwardOutput with_zero = forward(cfg, params, x, 0, &zero);
    CHECK(std::memcmp(plain.logits.data.data(), with_zero.logits.data.data(),
                      plain.logits.data.size() * sizeof(double)) == 0);

    Feedback fb = zero;
    fb[0].data[5] = 0.5;
    ForwardOutput with_fb = forward(cfg, params, x, 0, &fb);
    bool changed = false;
    for (size_t i = 0; i < plain.logits.data.size(); ++i)
        changed |= plain.logits.data[i] != with_fb.logits.data[i];
    CHECK(changed);
}

TEST_CASE("null class row receives gradient only when the null class is used") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 53);
    TokenGrid x0 = micro_grid(59);
    auto [xt, m] = apply_random_mask(x0, 5, 61);

    TensorMap grads = zeros_like(params);
    loss_and_grads(cfg, params, xt, 0, x0, m, &grads);
    const Tensor& d_cls = grads.at("cls_emb");
    const int d = cfg.dim;
    double null_row = 0.0, used_row = 0.0;
    for (int k = 0; k < d; ++k) {
        null_row += std::abs(d_cls.data[(size_t)cfg.classes * d + k]);
        used_row += std::abs(d_cls.data[k]);
    }
    CHECK(null_row == 0.0);
    CHECK(used_row > 0.0);

    TensorMap g2 = zeros_like(params);
    loss_and_grads(cfg, params, xt, cfg.classes, x0, m, &g2);
    double null2 = 0.0;
    for (int k = 0; k < d; ++k) null2 += std::abs(g2.at("cls_emb").data[(size_t)cfg.classes * d + k]);
    CHECK(null2 > 0.0);
}

TEST_CASE("optimizer decays matrices but never biases, norms or embeddings") {
    GeneratorConfig cfg = micro_config();
    TensorMap params = init_generator_params(cfg, 67);
    TensorMap before = params;
    AdamW opt;
    opt.lr = 1e-2;
    opt.weight_decay = 0.1;
    opt.warmup = 0;
    opt.total_steps = 100;
    opt.init(params);
    TensorMap zero_grads = zeros_like(params);
    opt.step(params, zero_grads);

    const double factor = 1.0 - opt.lr_at(0) * opt.weight_decay;
    for (const auto& [name, t] : params) {
        const Tensor& b = before.at(name);
        const bool decays = t.shape.size() >= 2 && name.find("_emb") == std::string::npos;
        for (size_t i = 0; i < t.numel(); ++i) {
            if (decays)
                CHECK(t.data[i] == doctest::Approx(b.data[i] * factor).epsilon(1e-12));
            else
                CHECK(t.data[i] == b.data[i]);
        }
    }
}

TEST_CASE("learning rate warms up linearly then follows a cosine to zero") {
    AdamW opt;
    opt.lr = 1.0;
    opt.warmup = 10;
    opt.total_steps = 110;
    CHECK(opt.lr_at(0) == doctest::Approx(0.1));
    CHECK(opt.lr_at(4) == doctest::Approx(0.5));
    CHECK(opt.lr_at(10) == doctest::Approx(1.0));
    CHECK(opt.lr_at(60) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(opt.lr_at(110) == doctest::Approx(0.0).epsilon(1e-12));
    for (int s = 1; s < 110; ++s) CHECK(opt.lr_at(s) >= opt.lr_at(s + 1) - 1e-12);
}

TEST_CASE("ema tracking") {
    GeneratorConfig cfg = micro_config();
    TensorMap live = init_generator_params(cfg, 71);
    TensorMap ema = init_generator_params(cfg, 73);

    TensorMap ema0 = ema;
    ema_update(ema0, live, 0.0);
    CHECK(map_equal(ema0, live));

    ema_update(ema, live, 0.75);
    for (const auto& [name, t] : ema) {
        const Tensor& l = live.at(name);
        const Tensor& orig = init_generator_params(cfg, 73).at(name);
        for (size_t i = 0; i < t.numel(); ++i)
            CHECK(t.data[i] == doctest::Approx(0.75 * orig.data[i] + 0.25 * l.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint container round trip and digest") {
    GeneratorConfig cfg = micro_config();
    GeneratorParams p;
    p.config = cfg;
    p.live = init_generator_params(cfg, 79);
    p.ema = init_generator_params(cfg, 83);

    Container c = generator_to_container(p);
    CHECK(c.meta.at("kind") == "generator");
    GeneratorParams q = generator_from_container(c);
    CHECK(q.config.dim == cfg.dim);
    CHECK(q.config.vocab_k == cfg.vocab_k);
    for (const auto& [name, t] : p.live) {
        const Tensor& lt = q.live.at(name);
        for (size_t i = 0; i < t.numel(); ++i) CHECK(lt.data[i] == (double)(float)t.data[i]);
    }
    for (const auto& [name, t] : p.ema) {
        const Tensor& et = q.ema.at(name);
        for (size_t i = 0; i < t.numel(); ++i) CHECK(et.data[i] == (double)(float)t.data[i]);
    }
    CHECK(params_digest(q) == params_digest(generator_from_container(generator_to_container(q))));

    GeneratorParams r = q;
    at(r.live, "head.b").data[0] += 1.0;
    CHECK(params_digest(r) != params_digest(q));

    Container bad = c;
    bad.meta["kind"] = "adapter";
    CHECK_THROWS_AS(generator_from_container(bad), IoError);
}

TEST_CASE("training memorizes a two-image dataset") {
    DatasetSpec spec;
    spec.count = 2;
    spec.classes = 2;
    spec.height = 16;
    spec.width = 16;
    spec.seed = 12;
    LabeledImageSet set = generate_dataset(spec);
    Codebook cb = fit_codebook(set, 8, 4, 4, 5);

    GeneratorConfig cfg;
    cfg.layers = 2;
    cfg.dim = 32;
    cfg.heads = 4;
    cfg.vocab_k = 8;
    cfg.n_tokens = 16;
    cfg.classes = 2;
    cfg.lr = 2e-3;
    cfg.weight_decay = 0.0;
    cfg.steps = 700;
    cfg.batch = 2;
    cfg.warmup = 30;
    cfg.ema_decay = 0.99;

    double last_loss = 1e9;
    GeneratorParams gen = train_generator(set, cb, cfg, 7,
                                          [&](int, double loss, double, double) { last_loss = loss; });
    CHECK(last_loss < 0.1);

    // the EMA weights predict the training tokens at held positions
    double eval_loss = 0.0;
    for (int i = 0; i < 2; ++i) {
        TokenGrid x0 = tokenize(set.images[i], cb);
        auto [xt, m] = apply_random_mask(x0, 8, 100 + i);
        eval_loss += masked_loss(forward(cfg, gen.ema, xt, set.labels[i]).logits, x0, m);
    }
    CHECK(eval_loss / 2 < 0.35);
}
