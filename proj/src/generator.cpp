#include "maskgen/generator.hpp"

#include "maskgen/config_json.hpp"

#include "maskgen/error.hpp"
#include "maskgen/kernels.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

namespace maskgen {

using nlohmann::json;

void GeneratorConfig::validate() const {
    if (layers < 1 || dim < 1 || heads < 1)
        throw ConfigError("generator: layers, dim and heads must be positive");
    if (dim % heads != 0)
        throw ConfigError("generator: dim must be divisible by heads");
    if (vocab_k < 2)
        throw ConfigError("generator: vocab_k must be at least 2");
    if (n_tokens < 1 || classes < 1)
        throw ConfigError("generator: n_tokens and classes must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("generator: dropout must lie in [0, 1)");
    if (cond_dropout_prob < 0.0 || cond_dropout_prob >= 1.0)
        throw ConfigError("generator: cond_dropout_prob must lie in [0, 1)");
    if (lr <= 0.0 || weight_decay < 0.0)
        throw ConfigError("generator: lr must be positive and weight_decay non-negative");
    if (steps < 1 || batch < 1 || warmup < 0)
        throw ConfigError("generator: steps and batch must be positive, warmup non-negative");
    if (ema_decay < 0.0 || ema_decay >= 1.0)
        throw ConfigError("generator: ema_decay must lie in [0, 1)");
}

namespace {

void add_inplace(double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) a[i] += b[i];
}

void mul_inplace(double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) a[i] *= b[i];
}

std::string blk(int i, const char* suffix) { return "blk" + std::to_string(i) + suffix; }

struct LayerActs {
    Tensor ln1_out, ln1_mean, ln1_rstd;
    Tensor q, k, v;
    Tensor probs;      // [heads, S, S]
    Tensor ctx;        // [S, dim]
    Tensor drop_attn;  // inverted-dropout multipliers; empty when inactive
    Tensor xa;         // stream after the attention residual
    Tensor ln2_out, ln2_mean, ln2_rstd;
    Tensor mlp_pre, mlp_act;
    Tensor drop_mlp;
};

struct Workspace {
    std::vector<Tensor> hidden;  // L+1 residual-stream states
    std::vector<LayerActs> layer;
    Tensor lnf_out, lnf_mean, lnf_rstd;
    Tensor logits;
    int class_used = 0;

    void resize(const GeneratorConfig& cfg) {
        const int64_t S = cfg.seq(), d = cfg.dim, H = cfg.heads, ff = cfg.ff();
        hidden.assign(cfg.layers + 1, Tensor({S, d}));
        layer.assign(cfg.layers, LayerActs{});
        for (auto& la : layer) {
            la.ln1_out = Tensor({S, d});
            la.ln1_mean = Tensor({S});
            la.ln1_rstd = Tensor({S});
            la.q = Tensor({S, d});
            la.k = Tensor({S, d});
            la.v = Tensor({S, d});
            la.probs = Tensor({H, S, S});
            la.ctx = Tensor({S, d});
            la.xa = Tensor({S, d});
            la.ln2_out = Tensor({S, d});
            la.ln2_mean = Tensor({S});
            la.ln2_rstd = Tensor({S});
            la.mlp_pre = Tensor({S, ff});
            la.mlp_act = Tensor({S, ff});
        }
        lnf_out = Tensor({S, d});
        lnf_mean = Tensor({S});
        lnf_rstd = Tensor({S});
        logits = Tensor({(int64_t)cfg.n_tokens, (int64_t)cfg.vocab_k});
    }
};

const Tensor& p(const TensorMap& m, const std::string& name) { return at(m, name); }

void draw_dropout(Tensor& mask, int64_t rows, int64_t cols, double prob, Rng& rng) {
    mask = Tensor({rows, cols});
    const double inv = 1.0 / (1.0 - prob);
    for (auto& v : mask.data) v = rng.uniform() < prob ? 0.0 : inv;
}

void check_inputs(const GeneratorConfig& cfg, const TokenGrid& tokens, int class_id,
                  const Feedback* feedback) {
    if (tokens.k != cfg.vocab_k)
        throw ContractError("generator: token grid codebook size " + std::to_string(tokens.k) +
                            " does not match model vocab " + std::to_string(cfg.vocab_k));
    if ((int)tokens.tokens.size() != cfg.n_tokens)
        throw ContractError("generator: expected " + std::to_string(cfg.n_tokens) +
                            " tokens, got " + std::to_string(tokens.tokens.size()));
    for (int32_t t : tokens.tokens)
        if (t < 0 || t > tokens.mask_id())
            throw ContractError("generator: token id out of range");
    if (class_id < 0 || class_id > cfg.classes)
        throw DomainError("generator: class id " + std::to_string(class_id) +
                          " outside [0, " + std::to_string(cfg.classes) + "]");
    if (feedback) {
        if ((int)feedback->size() != cfg.layers)
            throw ContractError("generator: feedback must carry one signal per layer");
        for (const Tensor& f : *feedback)
            if (f.shape != std::vector<int64_t>{cfg.seq(), cfg.dim})
                throw ContractError("generator: feedback signal has wrong shape");
    }
}

void forward_ws(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& tokens,
                int class_id, const Feedback* feedback, Rng* drop_rng, Workspace& ws) {
    check_inputs(cfg, tokens, class_id, feedback);
    ws.resize(cfg);
    ws.class_used = class_id;

    const int S = cfg.seq(), d = cfg.dim, H = cfg.heads, hd = cfg.head_dim();
    const int ff = cfg.ff(), N = cfg.n_tokens, K = cfg.vocab_k;
    const double scale = 1.0 / std::sqrt((double)hd);
    const bool drop = cfg.dropout > 0.0 && drop_rng != nullptr;

    // token + positional + class embedding
    {
        double* x = ws.hidden[0].ptr();
        const double* tok = p(params, "tok_emb").data.data();
        const double* pos = p(params, "pos_emb").data.data();
        const double* cls = p(params, "cls_emb").data.data();
        for (int e = 0; e < d; ++e) x[e] = cls[(size_t)class_id * d + e] + pos[e];
        for (int i = 0; i < N; ++i) {
            const int32_t tid = tokens.tokens[i];
            double* row = x + (size_t)(i + 1) * d;
            const double* te = tok + (size_t)tid * d;
            const double* pe = pos + (size_t)(i + 1) * d;
            for (int e = 0; e < d; ++e) row[e] = te[e] + pe[e];
        }
    }

    for (int l = 0; l < cfg.layers; ++l) {
        LayerActs& la = ws.layer[l];
        const double* x = ws.hidden[l].ptr();

        kernels::layernorm_fwd(la.ln1_out.ptr(), la.ln1_mean.ptr(), la.ln1_rstd.ptr(), x,
                               p(params, blk(l, ".ln1.g")).data.data(),
                               p(params, blk(l, ".ln1.b")).data.data(), S, d);

        kernels::matmul_nt(la.q.ptr(), la.ln1_out.ptr(), p(params, blk(l, ".attn.wq")).data.data(), S, d, d);
        kernels::add_bias(la.q.ptr(), p(params, blk(l, ".attn.bq")).data.data(), S, d);
        kernels::matmul_nt(la.k.ptr(), la.ln1_out.ptr(), p(params, blk(l, ".attn.wk")).data.data(), S, d, d);
        kernels::add_bias(la.k.ptr(), p(params, blk(l, ".attn.bk")).data.data(), S, d);
        kernels::matmul_nt(la.v.ptr(), la.ln1_out.ptr(), p(params, blk(l, ".attn.wv")).data.data(), S, d, d);
        kernels::add_bias(la.v.ptr(), p(params, blk(l, ".attn.bv")).data.data(), S, d);

        if (feedback) add_inplace(la.v.ptr(), (*feedback)[cfg.layers - 1 - l].data.data(), (size_t)S * d);

        double* probs = la.probs.ptr();
        const double* q = la.q.ptr();
        const double* k = la.k.ptr();
        const double* v = la.v.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s) {
                double* row = probs + ((size_t)h * S + s) * S;
                const double* qs = q + (size_t)s * d + (size_t)h * hd;
                for (int t = 0; t < S; ++t) {
                    const double* kt = k + (size_t)t * d + (size_t)h * hd;
                    double acc = 0.0;
                    for (int e = 0; e < hd; ++e) acc += qs[e] * kt[e];
                    row[t] = acc * scale;
                }
            }
        kernels::softmax_rows(probs, probs, H * S, S);

        double* ctx = la.ctx.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s) {
                const double* row = probs + ((size_t)h * S + s) * S;
                double* cs = ctx + (size_t)s * d + (size_t)h * hd;
                for (int e = 0; e < hd; ++e) cs[e] = 0.0;
                for (int t = 0; t < S; ++t) {
                    const double* vt = v + (size_t)t * d + (size_t)h * hd;
                    const double w = row[t];
                    for (int e = 0; e < hd; ++e) cs[e] += w * vt[e];
                }
            }

        Tensor attn_out({S, d});
        kernels::matmul_nt(attn_out.ptr(), ctx, p(params, blk(l, ".attn.wo")).data.data(), S, d, d);
        kernels::add_bias(attn_out.ptr(), p(params, blk(l, ".attn.bo")).data.data(), S, d);
        if (drop) {
            draw_dropout(la.drop_attn, S, d, cfg.dropout, *drop_rng);
            mul_inplace(attn_out.ptr(), la.drop_attn.ptr(), (size_t)S * d);
        }

        double* xa = la.xa.ptr();
        std::memcpy(xa, x, sizeof(double) * (size_t)S * d);
        add_inplace(xa, attn_out.ptr(), (size_t)S * d);

        kernels::layernorm_fwd(la.ln2_out.ptr(), la.ln2_mean.ptr(), la.ln2_rstd.ptr(), xa,
                               p(params, blk(l, ".ln2.g")).data.data(),
                               p(params, blk(l, ".ln2.b")).data.data(), S, d);

        kernels::matmul_nt(la.mlp_pre.ptr(), la.ln2_out.ptr(), p(params, blk(l, ".mlp.w1")).data.data(), S, ff, d);
        kernels::add_bias(la.mlp_pre.ptr(), p(params, blk(l, ".mlp.b1")).data.data(), S, ff);
        kernels::gelu_fwd(la.mlp_act.ptr(), la.mlp_pre.ptr(), (size_t)S * ff);

        Tensor mlp_out({S, d});
        kernels::matmul_nt(mlp_out.ptr(), la.mlp_act.ptr(), p(params, blk(l, ".mlp.w2")).data.data(), S, d, ff);
        kernels::add_bias(mlp_out.ptr(), p(params, blk(l, ".mlp.b2")).data.data(), S, d);
        if (drop) {
            draw_dropout(la.drop_mlp, S, d, cfg.dropout, *drop_rng);
            mul_inplace(mlp_out.ptr(), la.drop_mlp.ptr(), (size_t)S * d);
        }

        double* xn = ws.hidden[l + 1].ptr();
        std::memcpy(xn, xa, sizeof(double) * (size_t)S * d);
        add_inplace(xn, mlp_out.ptr(), (size_t)S * d);
    }

    kernels::layernorm_fwd(ws.lnf_out.ptr(), ws.lnf_mean.ptr(), ws.lnf_rstd.ptr(),
                           ws.hidden[cfg.layers].ptr(), p(params, "lnf.g").data.data(),
                           p(params, "lnf.b").data.data(), S, d);

    // head reads content positions only (rows 1..N of the final stream)
    kernels::matmul_nt(ws.logits.ptr(), ws.lnf_out.ptr() + d, p(params, "head.w").data.data(), N, K, d);
    kernels::add_bias(ws.logits.ptr(), p(params, "head.b").data.data(), N, K);
}

// Backward through the whole stack. dlogits is [N, K]. Parameter gradients
// accumulate into *grads when non-null; feedback gradients are written (not
// accumulated) into *dfeedback when non-null.
void backward_ws(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& tokens,
                 const Workspace& ws, const Tensor& dlogits, TensorMap* grads, Feedback* dfeedback) {
    const int S = cfg.seq(), d = cfg.dim, H = cfg.heads, hd = cfg.head_dim();
    const int ff = cfg.ff(), N = cfg.n_tokens, K = cfg.vocab_k;
    const double scale = 1.0 / std::sqrt((double)hd);

    if (dfeedback) dfeedback->assign(cfg.layers, Tensor({S, d}));

    Tensor d_lnf({S, d});
    d_lnf.zero();
    kernels::matmul_nn(d_lnf.ptr() + d, dlogits.data.data(), p(params, "head.w").data.data(), N, d, K);
    if (grads) {
        kernels::matmul_tn_acc(at(*grads, "head.w").ptr(), dlogits.data.data(), ws.lnf_out.data.data() + d, N, d, K);
        kernels::bias_grad_acc(at(*grads, "head.b").ptr(), dlogits.data.data(), N, K);
    }

    Tensor d_stream({S, d});
    {
        Tensor dg({d}), db({d});
        double* dgp = grads ? at(*grads, "lnf.g").ptr() : dg.ptr();
        double* dbp = grads ? at(*grads, "lnf.b").ptr() : db.ptr();
        kernels::layernorm_bwd(d_stream.ptr(), dgp, dbp, d_lnf.ptr(), ws.hidden[cfg.layers].data.data(),
                               p(params, "lnf.g").data.data(), ws.lnf_mean.data.data(),
                               ws.lnf_rstd.data.data(), S, d);
    }

    Tensor d_branch({S, d}), d_act({S, ff}), d_pre({S, ff}), d_y({S, d});
    Tensor d_ctx({S, d}), dq({S, d}), dk({S, d}), dv({S, d}), d_probs;
    Tensor scratch_g({d}), scratch_b({d});
    Tensor scratch_tmp({S, d});

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerActs& la = ws.layer[l];

        // MLP branch
        std::memcpy(d_branch.ptr(), d_stream.ptr(), sizeof(double) * (size_t)S * d);
        if (la.drop_mlp.numel()) mul_inplace(d_branch.ptr(), la.drop_mlp.data.data(), (size_t)S * d);
        if (grads) {
            kernels::matmul_tn_acc(at(*grads, blk(l, ".mlp.w2")).ptr(), d_branch.ptr(), la.mlp_act.data.data(), S, ff, d);
            kernels::bias_grad_acc(at(*grads, blk(l, ".mlp.b2")).ptr(), d_branch.ptr(), S, d);
        }
        kernels::matmul_nn(d_act.ptr(), d_branch.ptr(), p(params, blk(l, ".mlp.w2")).data.data(), S, ff, d);
        d_pre.zero();
        kernels::gelu_bwd(d_pre.ptr(), d_act.ptr(), la.mlp_pre.data.data(), (size_t)S * ff);
        if (grads) {
            kernels::matmul_tn_acc(at(*grads, blk(l, ".mlp.w1")).ptr(), d_pre.ptr(), la.ln2_out.data.data(), S, d, ff);
            kernels::bias_grad_acc(at(*grads, blk(l, ".mlp.b1")).ptr(), d_pre.ptr(), S, ff);
        }
        kernels::matmul_nn(d_y.ptr(), d_pre.ptr(), p(params, blk(l, ".mlp.w1")).data.data(), S, d, ff);
        {
            scratch_g.zero();
            scratch_b.zero();
            double* dgp = grads ? at(*grads, blk(l, ".ln2.g")).ptr() : scratch_g.ptr();
            double* dbp = grads ? at(*grads, blk(l, ".ln2.b")).ptr() : scratch_b.ptr();
            kernels::layernorm_bwd(scratch_tmp.ptr(), dgp, dbp, d_y.ptr(), la.xa.data.data(),
                                   p(params, blk(l, ".ln2.g")).data.data(), la.ln2_mean.data.data(),
                                   la.ln2_rstd.data.data(), S, d);
        }
        // gradient w.r.t. the stream after attention = residual + layernorm path
        Tensor d_xa({S, d});
        std::memcpy(d_xa.ptr(), d_stream.ptr(), sizeof(double) * (size_t)S * d);
        add_inplace(d_xa.ptr(), scratch_tmp.ptr(), (size_t)S * d);

        // attention branch
        std::memcpy(d_branch.ptr(), d_xa.ptr(), sizeof(double) * (size_t)S * d);
        if (la.drop_attn.numel()) mul_inplace(d_branch.ptr(), la.drop_attn.data.data(), (size_t)S * d);
        if (grads) {
            kernels::matmul_tn_acc(at(*grads, blk(l, ".attn.wo")).ptr(), d_branch.ptr(), la.ctx.data.data(), S, d, d);
            kernels::bias_grad_acc(at(*grads, blk(l, ".attn.bo")).ptr(), d_branch.ptr(), S, d);
        }
        kernels::matmul_nn(d_ctx.ptr(), d_branch.ptr(), p(params, blk(l, ".attn.wo")).data.data(), S, d, d);

        d_probs = Tensor({H, S, S});
        const double* probs = la.probs.data.data();
        const double* q = la.q.data.data();
        const double* k = la.k.data.data();
        const double* v = la.v.data.data();
        double* dp = d_probs.ptr();
        const double* dctx = d_ctx.data.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s) {
                double* row = dp + ((size_t)h * S + s) * S;
                const double* ds = dctx + (size_t)s * d + (size_t)h * hd;
                for (int t = 0; t < S; ++t) {
                    const double* vt = v + (size_t)t * d + (size_t)h * hd;
                    double acc = 0.0;
                    for (int e = 0; e < hd; ++e) acc += ds[e] * vt[e];
                    row[t] = acc;
                }
            }
        double* dvp = dv.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < S; ++t) {
                double* dt = dvp + (size_t)t * d + (size_t)h * hd;
                for (int e = 0; e < hd; ++e) dt[e] = 0.0;
                for (int s = 0; s < S; ++s) {
                    const double w = probs[((size_t)h * S + s) * S + t];
                    const double* ds = dctx + (size_t)s * d + (size_t)h * hd;
                    for (int e = 0; e < hd; ++e) dt[e] += w * ds[e];
                }
            }
        // softmax backward, in place on d_probs
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s) {
                double* row = dp + ((size_t)h * S + s) * S;
                const double* prow = probs + ((size_t)h * S + s) * S;
                double dot = 0.0;
                for (int t = 0; t < S; ++t) dot += prow[t] * row[t];
                for (int t = 0; t < S; ++t) row[t] = prow[t] * (row[t] - dot);
            }
        double* dqp = dq.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int s = 0; s < S; ++s) {
                double* dsq = dqp + (size_t)s * d + (size_t)h * hd;
                const double* row = dp + ((size_t)h * S + s) * S;
                for (int e = 0; e < hd; ++e) dsq[e] = 0.0;
                for (int t = 0; t < S; ++t) {
                    const double* kt = k + (size_t)t * d + (size_t)h * hd;
                    const double w = row[t] * scale;
                    for (int e = 0; e < hd; ++e) dsq[e] += w * kt[e];
                }
            }
        double* dkp = dk.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < S; ++t) {
                double* dtk = dkp + (size_t)t * d + (size_t)h * hd;
                for (int e = 0; e < hd; ++e) dtk[e] = 0.0;
                for (int s = 0; s < S; ++s) {
                    const double w = dp[((size_t)h * S + s) * S + t] * scale;
                    const double* qs = q + (size_t)s * d + (size_t)h * hd;
                    for (int e = 0; e < hd; ++e) dtk[e] += w * qs[e];
                }
            }

        if (dfeedback) (*dfeedback)[cfg.layers - 1 - l] = dv;

        if (grads) {
            kernels::matmul_tn_acc(at(*grads, blk(l, ".attn.wq")).ptr(), dq.ptr(), la.ln1_out.data.data(), S, d, d);
            kernels::bias_grad_acc(at(*grads, blk(l, ".attn.bq")).ptr(), dq.ptr(), S, d);
            kernels::matmul_tn_acc(at(*grads, blk(l, ".attn.wk")).ptr(), dk.ptr(), la.ln1_out.data.data(), S, d, d);
            kernels::bias_grad_acc(at(*grads, blk(l, ".attn.bk")).ptr(), dk.ptr(), S, d);
            kernels::matmul_tn_acc(at(*grads, blk(l, ".attn.wv")).ptr(), dv.ptr(), la.ln1_out.data.data(), S, d, d);
            kernels::bias_grad_acc(at(*grads, blk(l, ".attn.bv")).ptr(), dv.ptr(), S, d);
        }

        kernels::matmul_nn(d_y.ptr(), dq.ptr(), p(params, blk(l, ".attn.wq")).data.data(), S, d, d);
        kernels::matmul_nn(scratch_tmp.ptr(), dk.ptr(), p(params, blk(l, ".attn.wk")).data.data(), S, d, d);
        add_inplace(d_y.ptr(), scratch_tmp.ptr(), (size_t)S * d);
        kernels::matmul_nn(scratch_tmp.ptr(), dv.ptr(), p(params, blk(l, ".attn.wv")).data.data(), S, d, d);
        add_inplace(d_y.ptr(), scratch_tmp.ptr(), (size_t)S * d);

        {
            scratch_g.zero();
            scratch_b.zero();
            double* dgp = grads ? at(*grads, blk(l, ".ln1.g")).ptr() : scratch_g.ptr();
            double* dbp = grads ? at(*grads, blk(l, ".ln1.b")).ptr() : scratch_b.ptr();
            kernels::layernorm_bwd(scratch_tmp.ptr(), dgp, dbp, d_y.ptr(), ws.hidden[l].data.data(),
                                   p(params, blk(l, ".ln1.g")).data.data(), la.ln1_mean.data.data(),
                                   la.ln1_rstd.data.data(), S, d);
        }
        std::memcpy(d_stream.ptr(), d_xa.ptr(), sizeof(double) * (size_t)S * d);
        add_inplace(d_stream.ptr(), scratch_tmp.ptr(), (size_t)S * d);
    }

    if (grads) {
        double* d_pos = at(*grads, "pos_emb").ptr();
        double* d_tok = at(*grads, "tok_emb").ptr();
        double* d_cls = at(*grads, "cls_emb").ptr();
        const double* ds = d_stream.data.data();
        add_inplace(d_pos, ds, (size_t)S * d);
        add_inplace(d_cls + (size_t)ws.class_used * d, ds, d);
        for (int i = 0; i < N; ++i)
            add_inplace(d_tok + (size_t)tokens.tokens[i] * d, ds + (size_t)(i + 1) * d, d);
    }
}

} // namespace

TensorMap init_generator_params(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = fork_rng(seed, "gen-init");
    const int64_t S = cfg.seq(), d = cfg.dim, ff = cfg.ff(), K = cfg.vocab_k;
    TensorMap m;
    auto normal = [&](const std::string& name, std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        t.fill_normal(rng, 0.02);
        m[name] = std::move(t);
    };
    auto zeros = [&](const std::string& name, std::vector<int64_t> shape) { m[name] = Tensor(std::move(shape)); };
    auto ones = [&](const std::string& name, std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        std::fill(t.data.begin(), t.data.end(), 1.0);
        m[name] = std::move(t);
    };

    normal("tok_emb", {K + 1, d});
    normal("pos_emb", {S, d});
    normal("cls_emb", {cfg.classes + 1, d});
    for (int l = 0; l < cfg.layers; ++l) {
        ones(blk(l, ".ln1.g"), {d});
        zeros(blk(l, ".ln1.b"), {d});
        normal(blk(l, ".attn.wq"), {d, d});
        zeros(blk(l, ".attn.bq"), {d});
        normal(blk(l, ".attn.wk"), {d, d});
        zeros(blk(l, ".attn.bk"), {d});
        normal(blk(l, ".attn.wv"), {d, d});
        zeros(blk(l, ".attn.bv"), {d});
        normal(blk(l, ".attn.wo"), {d, d});
        zeros(blk(l, ".attn.bo"), {d});
        ones(blk(l, ".ln2.g"), {d});
        zeros(blk(l, ".ln2.b"), {d});
        normal(blk(l, ".mlp.w1"), {ff, d});
        zeros(blk(l, ".mlp.b1"), {ff});
        normal(blk(l, ".mlp.w2"), {d, ff});
        zeros(blk(l, ".mlp.b2"), {d});
    }
    ones("lnf.g", {d});
    zeros("lnf.b", {d});
    normal("head.w", {K, d});
    zeros("head.b", {K});
    return m;
}

int64_t generator_param_count(const GeneratorConfig& cfg) {
    const int64_t S = cfg.seq(), d = cfg.dim, ff = cfg.ff(), K = cfg.vocab_k;
    const int64_t per_layer = 4 * d          // two layernorms
                              + 4 * (d * d + d)  // q, k, v, o projections
                              + ff * d + ff + d * ff + d;
    return (K + 1) * d + S * d + (cfg.classes + 1) * d + cfg.layers * per_layer + 2 * d + K * d + K;
}

ForwardOutput forward(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& tokens,
                      int class_id, const Feedback* feedback) {
    Workspace ws;
    forward_ws(cfg, params, tokens, class_id, feedback, nullptr, ws);
    ForwardOutput out;
    out.logits = std::move(ws.logits);
    out.hidden = std::move(ws.hidden);
    return out;
}

double masked_loss(const Tensor& logits, const TokenGrid& x0, const MaskState& m) {
    const int N = (int)x0.tokens.size();
    if (logits.shape.size() != 2 || logits.shape[0] != N)
        throw ContractError("masked_loss: logits shape does not match token count");
    if ((int)m.mask.size() != N)
        throw ContractError("masked_loss: mask length does not match token count");
    if (x0.has_mask())
        throw ContractError("masked_loss: target grid contains MASK");
    const int K = (int)logits.shape[1];
    if (x0.k != K)
        throw ContractError("masked_loss: logits vocab does not match codebook size");
    const int n_masked = m.n_masked();
    if (n_masked == 0)
        throw ContractError("masked_loss: no masked positions to score");

    Tensor lp({N, K});
    kernels::log_softmax_rows(lp.ptr(), logits.data.data(), N, K);
    double total = 0.0;
    for (int i = 0; i < N; ++i)
        if (m.mask[i] == 0) total -= lp.data[(size_t)i * K + x0.tokens[i]];
    return total / n_masked;
}

double masked_loss_grad(const Tensor& logits, const TokenGrid& x0, const MaskState& m, Tensor& dlogits) {
    const double loss = masked_loss(logits, x0, m);
    const int N = (int)logits.shape[0], K = (int)logits.shape[1];
    dlogits = Tensor({N, K});
    Tensor sm({N, K});
    kernels::softmax_rows(sm.ptr(), logits.data.data(), N, K);
    const double inv = 1.0 / m.n_masked();
    for (int i = 0; i < N; ++i) {
        if (m.mask[i] != 0) continue;
        double* row = dlogits.ptr() + (size_t)i * K;
        const double* s = sm.data.data() + (size_t)i * K;
        for (int k = 0; k < K; ++k) row[k] = s[k] * inv;
        row[x0.tokens[i]] -= inv;
    }
    return loss;
}

double loss_and_grads(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& x_t,
                      int class_id, const TokenGrid& x0, const MaskState& m, TensorMap* grads,
                      const Feedback* feedback, Feedback* dfeedback, Rng* drop_rng) {
    Workspace ws;
    forward_ws(cfg, params, x_t, class_id, feedback, drop_rng, ws);
    Tensor dlogits;
    const double loss = masked_loss_grad(ws.logits, x0, m, dlogits);
    backward_ws(cfg, params, x_t, ws, dlogits, grads, dfeedback);
    return loss;
}

void AdamW::init(const TensorMap& params) {
    m = zeros_like(params);
    v = zeros_like(params);
    t = 0;
}

double AdamW::lr_at(int step) const {
    if (warmup > 0 && step < warmup) return lr * (step + 1) / warmup;
    const int span = std::max(1, total_steps - warmup);
    double prog = (double)(step - warmup) / span;
    prog = std::clamp(prog, 0.0, 1.0);
    return lr * 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846));
}

void AdamW::step(TensorMap& params, const TensorMap& grads) {
    ++t;
    const double a = lr_at(t - 1);
    const double b1c = 1.0 - std::pow(beta1, t);
    const double b2c = 1.0 - std::pow(beta2, t);
    for (auto& [name, pt] : params) {
        auto git = grads.find(name);
        if (git == grads.end())
            throw ContractError("optimizer: missing gradient for " + name);
        const Tensor& g = git->second;
        Tensor& mt = at(m, name);
        Tensor& vt = at(v, name);
        const bool decay = pt.shape.size() >= 2 && name.find("_emb") == std::string::npos;
        const size_t n = pt.numel();
        for (size_t i = 0; i < n; ++i) {
            mt.data[i] = beta1 * mt.data[i] + (1.0 - beta1) * g.data[i];
            vt.data[i] = beta2 * vt.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            const double mhat = mt.data[i] / b1c;
            const double vhat = vt.data[i] / b2c;
            pt.data[i] -= a * mhat / (std::sqrt(vhat) + eps);
            if (decay) pt.data[i] -= a * weight_decay * pt.data[i];
        }
    }
}

void ema_update(TensorMap& ema, const TensorMap& live, double decay) {
    for (auto& [name, et] : ema) {
        const Tensor& lt = at(live, name);
        for (size_t i = 0; i < et.data.size(); ++i)
            et.data[i] = decay * et.data[i] + (1.0 - decay) * lt.data[i];
    }
}

GeneratorParams train_generator(const LabeledImageSet& dataset, const Codebook& cb,
                                const GeneratorConfig& cfg, uint64_t seed, const StepLogger& logger) {
    cfg.validate();
    if (dataset.images.empty())
        throw ConfigError("train: dataset is empty");
    if (cb.k != cfg.vocab_k)
        throw ConfigError("train: codebook size " + std::to_string(cb.k) +
                          " does not match generator vocab " + std::to_string(cfg.vocab_k));
    if (dataset.classes != cfg.classes)
        throw ConfigError("train: dataset classes do not match generator classes");

    const size_t count = dataset.images.size();
    std::vector<TokenGrid> toks(count);
    for (size_t i = 0; i < count; ++i) toks[i] = tokenize(dataset.images[i], cb);
    if ((int)toks[0].tokens.size() != cfg.n_tokens)
        throw ConfigError("train: tokenizer yields " + std::to_string(toks[0].tokens.size()) +
                          " tokens per image but generator expects " + std::to_string(cfg.n_tokens));

    GeneratorParams out;
    out.config = cfg;
    out.live = init_generator_params(cfg, seed);
    out.ema = out.live;

    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.warmup = cfg.warmup;
    opt.total_steps = cfg.steps;
    opt.init(out.live);

    TensorMap grads = zeros_like(out.live);
    const int N = cfg.n_tokens;

    for (int s = 0; s < cfg.steps; ++s) {
        const auto t0 = std::chrono::steady_clock::now();
        for (auto& [name, g] : grads) g.zero();
        double loss_sum = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            Rng ir = fork_rng(seed, "train-item", (uint64_t)s, (uint64_t)b);
            const size_t idx = ir.uniform_int(count);
            const double u = ir.uniform_closed_top();
            int n_mask = (int)std::ceil(mask_ratio(u) * N);
            n_mask = std::clamp(n_mask, 1, N);
            auto [x_t, mstate] = apply_random_mask(toks[idx], n_mask, ir.next_u64());
            int cid = dataset.labels[idx];
            if (cfg.cond_dropout_prob > 0.0 && ir.uniform() < cfg.cond_dropout_prob)
                cid = cfg.classes;
            Rng dr = fork_rng(seed, "dropout", (uint64_t)s, (uint64_t)b);
            loss_sum += loss_and_grads(cfg, out.live, x_t, cid, toks[idx], mstate, &grads, nullptr,
                                       nullptr, cfg.dropout > 0.0 ? &dr : nullptr);
        }
        const double inv_b = 1.0 / cfg.batch;
        for (auto& [name, g] : grads)
            for (double& x : g.data) x *= inv_b;
        const double loss = loss_sum * inv_b;
        if (!std::isfinite(loss))
            throw TrainingDivergence("loss became non-finite at step " + std::to_string(s));
        const double lr_used = opt.lr_at(opt.t);
        opt.step(out.live, grads);
        ema_update(out.ema, out.live, cfg.ema_decay);
        if (logger) {
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            logger(s, loss, lr_used, ms);
        }
    }
    return out;
}

Container generator_to_container(const GeneratorParams& p, std::map<std::string, std::string> extra_meta) {
    Container c;
    c.tensors = p.live;
    for (const auto& [name, t] : p.ema) c.tensors["ema." + name] = t;
    c.meta["kind"] = "generator";
    c.meta["config"] = generator_config_to_json(p.config).dump();
    for (auto& [k, v] : extra_meta) c.meta[k] = std::move(v);
    return c;
}

GeneratorParams generator_from_container(const Container& c) {
    auto kind = c.meta.find("kind");
    if (kind == c.meta.end() || kind->second != "generator")
        throw IoError("checkpoint is not a generator checkpoint");
    auto cj = c.meta.find("config");
    if (cj == c.meta.end())
        throw IoError("generator checkpoint is missing its config");
    GeneratorParams p;
    try {
        p.config = generator_config_from_json(json::parse(cj->second));
    } catch (const json::exception& e) {
        throw IoError(std::string("generator checkpoint config is malformed: ") + e.what());
    }
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("ema.", 0) == 0)
            p.ema[name.substr(4)] = t;
        else
            p.live[name] = t;
    }
    if (p.live.empty() || p.live.size() != p.ema.size())
        throw IoError("generator checkpoint has mismatched live/EMA tensor sets");
    for (const auto& [name, t] : p.live) {
        auto it = p.ema.find(name);
        if (it == p.ema.end() || it->second.shape != t.shape)
            throw IoError("generator checkpoint has mismatched live/EMA tensor sets");
    }
    return p;
}

std::string params_digest(const GeneratorParams& p) {
    Container c;
    c.tensors = p.live;
    for (const auto& [name, t] : p.ema) c.tensors["ema." + name] = t;
    c.meta["kind"] = "generator";
    c.meta["config"] = generator_config_to_json(p.config).dump();
    return container_digest(c);
}

} // namespace maskgen
