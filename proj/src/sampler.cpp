#include "maskgen/sampler.hpp"

#include "maskgen/error.hpp"
#include "maskgen/kernels.hpp"
#include "maskgen/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace maskgen {

const char* mode_name(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::self: return "self";
        case GuidanceMode::cfg: return "cfg";
        case GuidanceMode::blur: return "blur";
    }
    return "?";
}

GuidanceMode mode_from_name(const std::string& name) {
    if (name == "none") return GuidanceMode::none;
    if (name == "self") return GuidanceMode::self;
    if (name == "cfg") return GuidanceMode::cfg;
    if (name == "blur") return GuidanceMode::blur;
    throw ConfigError("unknown guidance mode '" + name + "' (expected none, self, cfg or blur)");
}

void GuidanceConfig::validate() const {
    if (scale < -1.0)
        throw ConfigError("guidance scale must be at least -1");
    if (temperature < 0.0)
        throw ConfigError("selection temperature must be non-negative");
    if (steps < 1)
        throw ConfigError("sampling needs at least one step");
    if (blur_sigma < 0.0)
        throw ConfigError("blur sigma must be non-negative");
}

namespace {

void check_log_probs(const Tensor& lp, const char* what) {
    if (lp.shape.size() != 2)
        throw ContractError(std::string(what) + ": expected a rows x vocab matrix");
    const int rows = (int)lp.shape[0], cols = (int)lp.shape[1];
    for (int r = 0; r < rows; ++r) {
        const double* row = lp.data.data() + (size_t)r * cols;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cols; ++c) {
            if (!std::isfinite(row[c]))
                throw ContractError(std::string(what) + ": non-finite log-probability");
            mx = std::max(mx, row[c]);
        }
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        if (std::abs(lse) > 1e-5)
            throw ContractError(std::string(what) + ": row is not a normalized log-probability vector");
    }
}

} // namespace

Tensor guided_combine(const Tensor& logp_hat, const Tensor& logp_bar, double s) {
    check_log_probs(logp_hat, "guided_combine main input");
    check_log_probs(logp_bar, "guided_combine smoothed input");
    if (logp_hat.shape != logp_bar.shape)
        throw ContractError("guided_combine: input shapes differ");
    if (s == 0.0) return logp_hat;

    const int rows = (int)logp_hat.shape[0], cols = (int)logp_hat.shape[1];
    Tensor out({rows, cols});
    for (int r = 0; r < rows; ++r) {
        const double* ph = logp_hat.data.data() + (size_t)r * cols;
        const double* pb = logp_bar.data.data() + (size_t)r * cols;
        double* o = out.ptr() + (size_t)r * cols;
        bool same = true;
        for (int c = 0; c < cols; ++c)
            if (ph[c] != pb[c]) {
                same = false;
                break;
            }
        if (same) {
            std::copy(ph, ph + cols, o);
            continue;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < cols; ++c) {
            o[c] = pb[c] + (1.0 + s) * (ph[c] - pb[c]);
            mx = std::max(mx, o[c]);
        }
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(o[c] - mx);
        const double lse = mx + std::log(sum);
        for (int c = 0; c < cols; ++c) o[c] -= lse;
    }
    return out;
}

Tensor cfg_combine(const Tensor& logp_cond, const Tensor& logp_uncond, double s) {
    return guided_combine(logp_cond, logp_uncond, s);
}

Tensor blur_logits(const Tensor& logits, int rows, int cols, double sigma) {
    if (sigma < 0.0)
        throw DomainError("blur_logits: sigma must be non-negative");
    if (logits.shape.size() != 2 || logits.shape[0] != (int64_t)rows * cols)
        throw ContractError("blur_logits: logits rows do not match the grid shape");
    Tensor out = logits;
    kernels::gaussian_blur_grid(out.ptr(), rows, cols, (int)logits.shape[1], sigma);
    return out;
}

MaskState select_mask(const Tensor& logp_tilde, const TokenGrid& sampled, const MaskState& prev,
                      int t, int total_steps, double tau, uint64_t seed) {
    const int n = (int)prev.mask.size();
    if (tau < 0.0)
        throw DomainError("select_mask: tau must be non-negative");
    if (t < 1 || t > total_steps)
        throw ContractError("select_mask: step index outside [1, T]");
    if (prev.t != t || prev.total_steps != total_steps)
        throw ContractError("select_mask: mask state is not at the expected step");
    if ((int)sampled.tokens.size() != n || logp_tilde.shape.size() != 2 || logp_tilde.shape[0] != n)
        throw ContractError("select_mask: grid, mask and log-prob sizes disagree");
    if (sampled.has_mask())
        throw ContractError("select_mask: sampled grid still contains MASK");

    const std::vector<int> sched = mask_schedule(total_steps, n);
    if (prev.n_masked() != sched[t])
        throw ContractError("select_mask: masked count does not match the schedule at step " +
                            std::to_string(t));
    const int keep = n - sched[t - 1];

    const int cols = (int)logp_tilde.shape[1];
    std::vector<double> conf(n);
    for (int i = 0; i < n; ++i)
        conf[i] = prev.mask[i] ? std::numeric_limits<double>::infinity()
                               : logp_tilde.data[(size_t)i * cols + sampled.tokens[i]];

    Rng rng(seed);
    const double beta = tau * (double)t / total_steps;
    for (int i = 0; i < n; ++i) conf[i] += beta * rng.gumbel();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (conf[a] != conf[b]) return conf[a] > conf[b];
        return a < b;
    });

    MaskState next;
    next.mask.assign(n, 0);
    next.t = t - 1;
    next.total_steps = total_steps;
    for (int i = 0; i < keep; ++i) next.mask[order[i]] = 1;
    for (int i = 0; i < n; ++i)
        if (prev.mask[i] && !next.mask[i])
            throw ContractError("select_mask: schedule would re-mask a fixed position");
    return next;
}

StepResult sample_step(const TokenGrid& x_t, const MaskState& m_t, int t, int class_id,
                       const GeneratorParams& gen, const AdapterParams* adapter,
                       const GuidanceConfig& cfg, int nfe_so_far) {
    cfg.validate();
    const GeneratorConfig& gc = gen.config;
    const int N = gc.n_tokens, K = gc.vocab_k;
    if ((int)m_t.mask.size() != N)
        throw ContractError("sample_step: mask length does not match the generator");
    if (cfg.mode == GuidanceMode::self && adapter == nullptr)
        throw ConfigError("self-guided sampling requires an adapter");

    int nfe = nfe_so_far;
    ForwardOutput fo = forward(gc, gen.ema, x_t, class_id);
    ++nfe;

    Tensor logp_hat({N, K});
    kernels::log_softmax_rows(logp_hat.ptr(), fo.logits.data.data(), N, K);

    Tensor logp_tilde;
    switch (cfg.mode) {
        case GuidanceMode::none:
            logp_tilde = logp_hat;
            break;
        case GuidanceMode::self: {
            SmoothedOutput so = smoothed_from_hidden(gen, *adapter, fo.hidden[gc.layers], x_t, class_id);
            ++nfe;
            Tensor logp_bar({N, K});
            kernels::log_softmax_rows(logp_bar.ptr(), so.logits_bar.data.data(), N, K);
            logp_tilde = guided_combine(logp_hat, logp_bar, cfg.scale);
            break;
        }
        case GuidanceMode::cfg: {
            ForwardOutput fu = forward(gc, gen.ema, x_t, gc.classes);
            ++nfe;
            Tensor logp_un({N, K});
            kernels::log_softmax_rows(logp_un.ptr(), fu.logits.data.data(), N, K);
            logp_tilde = cfg_combine(logp_hat, logp_un, cfg.scale);
            break;
        }
        case GuidanceMode::blur: {
            Tensor blurred = blur_logits(fo.logits, x_t.rows, x_t.cols, cfg.blur_sigma);
            Tensor logp_bar({N, K});
            kernels::log_softmax_rows(logp_bar.ptr(), blurred.data.data(), N, K);
            logp_tilde = guided_combine(logp_hat, logp_bar, cfg.scale);
            break;
        }
    }

    TokenGrid sampled = x_t;
    Rng tok_rng = fork_rng(cfg.seed, "tokens", (uint64_t)t);
    for (int i = 0; i < N; ++i) {
        if (m_t.mask[i]) continue;  // fixed tokens pass through unchanged
        const double* row = logp_tilde.data.data() + (size_t)i * K;
        int pick = 0;
        if (cfg.argmax_tokens) {
            for (int k = 1; k < K; ++k)
                if (row[k] > row[pick]) pick = k;
        } else {
            const double u = tok_rng.uniform();
            double cum = 0.0;
            pick = K - 1;
            for (int k = 0; k < K; ++k) {
                cum += std::exp(row[k]);
                if (u < cum) {
                    pick = k;
                    break;
                }
            }
        }
        sampled.tokens[i] = pick;
    }

    MaskState m_next = select_mask(logp_tilde, sampled, m_t, t, cfg.steps, cfg.temperature,
                                   derive_seed(cfg.seed, "gumbel", (uint64_t)t));

    StepResult res;
    res.m = m_next;
    res.x = sampled;
    for (int i = 0; i < N; ++i)
        if (!m_next.mask[i]) res.x.tokens[i] = K;

    res.rec.t = t;
    res.rec.n_masked_after = m_next.n_masked();
    double conf_sum = 0.0;
    for (int i = 0; i < N; ++i)
        if (!m_t.mask[i] && m_next.mask[i]) {
            res.rec.newly_fixed.push_back(i);
            conf_sum += logp_tilde.data[(size_t)i * K + sampled.tokens[i]];
        }
    res.rec.mean_confidence =
        res.rec.newly_fixed.empty() ? 0.0 : conf_sum / (double)res.rec.newly_fixed.size();
    res.rec.nfe_after = nfe;
    return res;
}

std::pair<TokenGrid, SampleTrace> generate(int class_id, const GeneratorParams& gen,
                                           const AdapterParams* adapter, const GuidanceConfig& cfg,
                                           int rows, int cols) {
    cfg.validate();
    const GeneratorConfig& gc = gen.config;
    if (rows < 1 || cols < 1 || rows * cols != gc.n_tokens)
        throw ContractError("generate: grid shape does not multiply to the generator token count");
    if (cfg.mode == GuidanceMode::self && adapter == nullptr)
        throw ConfigError("self-guided sampling requires an adapter");
    if (cfg.steps > gc.n_tokens)
        throw DomainError("generate: more steps than tokens to unmask");

    TokenGrid x;
    x.rows = rows;
    x.cols = cols;
    x.k = gc.vocab_k;
    x.tokens.assign((size_t)gc.n_tokens, (int32_t)gc.vocab_k);

    MaskState m;
    m.mask.assign((size_t)gc.n_tokens, 0);
    m.t = cfg.steps;
    m.total_steps = cfg.steps;

    SampleTrace trace;
    int nfe = 0;
    for (int t = cfg.steps; t >= 1; --t) {
        StepResult r = sample_step(x, m, t, class_id, gen, adapter, cfg, nfe);
        x = std::move(r.x);
        m = std::move(r.m);
        nfe = r.rec.nfe_after;
        trace.steps.push_back(std::move(r.rec));
    }
    if (m.n_masked() != 0 || x.has_mask())
        throw ContractError("generate: decoding finished with masked positions left");
    trace.final_grid = x;
    trace.total_nfe = nfe;
    if (cfg.mode == GuidanceMode::blur)
        trace.nfe_note = "blur reuses the main forward pass; NFE counts actual forward passes (T), "
                         "unlike the two-pass guided modes (2T)";
    return {x, trace};
}

} // namespace maskgen
