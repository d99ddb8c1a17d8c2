#include "maskgen/adapter.hpp"

#include "maskgen/config_json.hpp"

#include "maskgen/error.hpp"
#include "maskgen/kernels.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

namespace maskgen {

using nlohmann::json;

void AdapterConfig::validate() const {
    if (lambda < 0.0)
        throw ConfigError("adapter: lambda must be non-negative");
    if (error_rate < 0.0 || error_rate >= 1.0)
        throw ConfigError("adapter: error_rate must lie in [0, 1)");
    if (lr <= 0.0)
        throw ConfigError("adapter: lr must be positive");
    if (epochs < 1 || batch < 1 || warmup < 0)
        throw ConfigError("adapter: epochs and batch must be positive, warmup non-negative");
    if (ema_decay < 0.0 || ema_decay >= 1.0)
        throw ConfigError("adapter: ema_decay must lie in [0, 1)");
}

namespace {

constexpr double kRatioMin = 0.15;
constexpr double kRatioMax = 0.30;

std::string fb(int l, const char* suffix) { return "fb" + std::to_string(l) + suffix; }

const Tensor& p(const TensorMap& m, const std::string& name) { return at(m, name); }

TensorMap init_adapter_tensors(int layers, int dim, int classes, uint64_t seed) {
    Rng rng = fork_rng(seed, "adapter-init");
    const int64_t d = dim;
    TensorMap m;
    auto normal = [&](const std::string& name, std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        t.fill_normal(rng, 0.02);
        m[name] = std::move(t);
    };
    auto zeros = [&](const std::string& name, std::vector<int64_t> shape) { m[name] = Tensor(std::move(shape)); };
    normal("anch_emb", {classes, d});
    normal("anch.w1", {d, d});
    zeros("anch.b1", {d});
    normal("anch.w2", {d, d});
    zeros("anch.b2", {d});
    normal("select.p", {d, d});
    for (int l = 0; l < layers; ++l) {
        normal(fb(l, ".w1"), {d, d});
        zeros(fb(l, ".b1"), {d});
        normal(fb(l, ".w2"), {d, d});
        zeros(fb(l, ".b2"), {d});
    }
    return m;
}

struct AdapterActs {
    int class_id = 0;
    Tensor e;             // [d] class embedding row
    Tensor a_pre, a_act;  // [d] anchor MLP intermediates
    Tensor xi;            // [d]
    Tensor z;             // [S, d] input features
    Tensor pz;            // [S, d] P z
    Tensor sims;          // [S]
    Tensor znorm;         // [S]
    double xinorm = 0.0;
    Tensor y;                          // [S, d] selected features
    std::vector<Tensor> pre, act, sig; // L of [S, d]
    double reg = 0.0;
};

void anchor_fwd(const TensorMap& t, int d, int class_id, AdapterActs& acts) {
    const Tensor& anch_emb = p(t, "anch_emb");
    const int classes = (int)anch_emb.shape[0];
    if (class_id < 0 || class_id >= classes)
        throw DomainError("adapter: class id " + std::to_string(class_id) + " outside [0, " +
                          std::to_string(classes - 1) + "]");
    acts.class_id = class_id;
    acts.e = Tensor({d});
    std::memcpy(acts.e.ptr(), anch_emb.data.data() + (size_t)class_id * d, sizeof(double) * d);

    acts.a_pre = Tensor({d});
    kernels::matmul_nt(acts.a_pre.ptr(), acts.e.ptr(), p(t, "anch.w1").data.data(), 1, d, d);
    kernels::add_bias(acts.a_pre.ptr(), p(t, "anch.b1").data.data(), 1, d);
    acts.a_act = Tensor({d});
    kernels::gelu_fwd(acts.a_act.ptr(), acts.a_pre.ptr(), d);
    acts.xi = Tensor({d});
    kernels::matmul_nt(acts.xi.ptr(), acts.a_act.ptr(), p(t, "anch.w2").data.data(), 1, d, d);
    kernels::add_bias(acts.xi.ptr(), p(t, "anch.b2").data.data(), 1, d);
}

void adapter_fwd(const TensorMap& t, int layers, int dim, const Tensor& hidden_top, int class_id,
                 AdapterActs& acts) {
    if (hidden_top.shape.size() != 2 || hidden_top.shape[1] != dim)
        throw ContractError("adapter: hidden state width does not match adapter dim");
    const int S = (int)hidden_top.shape[0];
    const int d = dim;

    anchor_fwd(t, d, class_id, acts);

    acts.z = hidden_top;
    acts.pz = Tensor({S, d});
    kernels::matmul_nt(acts.pz.ptr(), acts.z.data.data(), p(t, "select.p").data.data(), S, d, d);

    acts.xinorm = std::sqrt(std::inner_product(acts.xi.data.begin(), acts.xi.data.end(),
                                               acts.xi.data.begin(), 0.0));
    acts.sims = Tensor({S});
    acts.znorm = Tensor({S});
    acts.y = Tensor({S, d});
    for (int i = 0; i < S; ++i) {
        const double* zi = acts.z.data.data() + (size_t)i * d;
        double dot = 0.0, nn = 0.0;
        for (int e = 0; e < d; ++e) {
            dot += zi[e] * acts.xi.data[e];
            nn += zi[e] * zi[e];
        }
        const double zn = std::sqrt(nn);
        acts.znorm.data[i] = zn;
        const double s = (zn > 0.0 && acts.xinorm > 0.0) ? dot / (zn * acts.xinorm) : 0.0;
        acts.sims.data[i] = s;
        const double* pzi = acts.pz.data.data() + (size_t)i * d;
        double* yi = acts.y.ptr() + (size_t)i * d;
        for (int e = 0; e < d; ++e) yi[e] = s * pzi[e];
    }

    acts.pre.assign(layers, Tensor({S, d}));
    acts.act.assign(layers, Tensor({S, d}));
    acts.sig.assign(layers, Tensor({S, d}));
    const Tensor* h = &acts.y;
    for (int l = 0; l < layers; ++l) {
        kernels::matmul_nt(acts.pre[l].ptr(), h->data.data(), p(t, fb(l, ".w1")).data.data(), S, d, d);
        kernels::add_bias(acts.pre[l].ptr(), p(t, fb(l, ".b1")).data.data(), S, d);
        kernels::gelu_fwd(acts.act[l].ptr(), acts.pre[l].data.data(), (size_t)S * d);
        kernels::matmul_nt(acts.sig[l].ptr(), acts.act[l].data.data(), p(t, fb(l, ".w2")).data.data(), S, d, d);
        kernels::add_bias(acts.sig[l].ptr(), p(t, fb(l, ".b2")).data.data(), S, d);
        h = &acts.sig[l];
    }

    double ss = 0.0;
    for (const Tensor& s : acts.sig)
        for (double v : s.data) ss += v * v;
    acts.reg = ss / ((double)layers * S * d);
}

// dsig holds the total downstream gradient of each signal (injection + any
// regularizer term). Gradients accumulate into grads.
void adapter_bwd(const TensorMap& t, int layers, int dim, const AdapterActs& acts,
                 const std::vector<Tensor>& dsig, TensorMap& grads) {
    const int S = (int)acts.z.shape[0];
    const int d = dim;

    Tensor carry({S, d}), dtot({S, d}), dact({S, d}), dpre({S, d});
    carry.zero();
    for (int l = layers - 1; l >= 0; --l) {
        std::memcpy(dtot.ptr(), dsig[l].data.data(), sizeof(double) * (size_t)S * d);
        for (size_t i = 0; i < (size_t)S * d; ++i) dtot.data[i] += carry.data[i];
        const Tensor& input = l == 0 ? acts.y : acts.sig[l - 1];
        kernels::matmul_tn_acc(at(grads, fb(l, ".w2")).ptr(), dtot.ptr(), acts.act[l].data.data(), S, d, d);
        kernels::bias_grad_acc(at(grads, fb(l, ".b2")).ptr(), dtot.ptr(), S, d);
        kernels::matmul_nn(dact.ptr(), dtot.ptr(), p(t, fb(l, ".w2")).data.data(), S, d, d);
        dpre.zero();
        kernels::gelu_bwd(dpre.ptr(), dact.ptr(), acts.pre[l].data.data(), (size_t)S * d);
        kernels::matmul_tn_acc(at(grads, fb(l, ".w1")).ptr(), dpre.ptr(), input.data.data(), S, d, d);
        kernels::bias_grad_acc(at(grads, fb(l, ".b1")).ptr(), dpre.ptr(), S, d);
        kernels::matmul_nn(carry.ptr(), dpre.ptr(), p(t, fb(l, ".w1")).data.data(), S, d, d);
    }
    const Tensor& dy = carry;

    // selection backward: y_i = sim_i * (P z_i)
    Tensor scaled({S, d});
    Tensor dxi({d});
    dxi.zero();
    for (int i = 0; i < S; ++i) {
        const double s = acts.sims.data[i];
        const double* dyi = dy.data.data() + (size_t)i * d;
        double* sc = scaled.ptr() + (size_t)i * d;
        for (int e = 0; e < d; ++e) sc[e] = s * dyi[e];
        const double zn = acts.znorm.data[i];
        if (zn > 0.0 && acts.xinorm > 0.0) {
            const double* pzi = acts.pz.data.data() + (size_t)i * d;
            double ds = 0.0;
            for (int e = 0; e < d; ++e) ds += dyi[e] * pzi[e];
            const double* zi = acts.z.data.data() + (size_t)i * d;
            const double inv = 1.0 / (zn * acts.xinorm);
            const double xs = s / (acts.xinorm * acts.xinorm);
            for (int e = 0; e < d; ++e) dxi.data[e] += ds * (zi[e] * inv - xs * acts.xi.data[e]);
        }
    }
    kernels::matmul_tn_acc(at(grads, "select.p").ptr(), scaled.ptr(), acts.z.data.data(), S, d, d);

    // anchor MLP backward
    kernels::matmul_tn_acc(at(grads, "anch.w2").ptr(), dxi.ptr(), acts.a_act.data.data(), 1, d, d);
    kernels::bias_grad_acc(at(grads, "anch.b2").ptr(), dxi.ptr(), 1, d);
    Tensor da({d}), dap({d});
    kernels::matmul_nn(da.ptr(), dxi.ptr(), p(t, "anch.w2").data.data(), 1, d, d);
    dap.zero();
    kernels::gelu_bwd(dap.ptr(), da.ptr(), acts.a_pre.data.data(), d);
    kernels::matmul_tn_acc(at(grads, "anch.w1").ptr(), dap.ptr(), acts.e.data.data(), 1, d, d);
    kernels::bias_grad_acc(at(grads, "anch.b1").ptr(), dap.ptr(), 1, d);
    Tensor de({d});
    kernels::matmul_nn(de.ptr(), dap.ptr(), p(t, "anch.w1").data.data(), 1, d, d);
    double* demb = at(grads, "anch_emb").ptr() + (size_t)acts.class_id * d;
    for (int e = 0; e < d; ++e) demb[e] += de.data[e];
}

TokenGrid blank_canvas(const TokenGrid& shape_like) {
    TokenGrid g;
    g.rows = shape_like.rows;
    g.cols = shape_like.cols;
    g.k = shape_like.k;
    g.tokens.assign(shape_like.tokens.size(), (int32_t)shape_like.k);
    return g;
}

void check_pairing(const GeneratorParams& gen, const AdapterParams& a) {
    if (a.layers != gen.config.layers || a.dim != gen.config.dim || a.classes != gen.config.classes)
        throw ContractError("adapter dimensions do not match the generator it is paired with");
}

} // namespace

AdapterParams init_adapter(const GeneratorConfig& gen_cfg, const AdapterConfig& cfg, uint64_t seed) {
    gen_cfg.validate();
    cfg.validate();
    AdapterParams a;
    a.config = cfg;
    a.layers = gen_cfg.layers;
    a.dim = gen_cfg.dim;
    a.classes = gen_cfg.classes;
    a.live = init_adapter_tensors(a.layers, a.dim, a.classes, seed);
    a.ema = a.live;
    const double ratio = adapter_param_ratio(a, generator_param_count(gen_cfg));
    if (ratio < kRatioMin || ratio > kRatioMax)
        throw ConfigError("adapter/generator parameter ratio " + std::to_string(ratio) +
                          " outside [" + std::to_string(kRatioMin) + ", " + std::to_string(kRatioMax) + "]");
    return a;
}

double adapter_param_ratio(const AdapterParams& a, int64_t gen_param_count) {
    if (gen_param_count <= 0)
        throw ContractError("adapter ratio: generator parameter count must be positive");
    return (double)total_params(a.live) / (double)gen_param_count;
}

Tensor class_anchor(const AdapterParams& a, int class_id) {
    AdapterActs acts;
    anchor_fwd(a.ema, a.dim, class_id, acts);
    return acts.xi;
}

Tensor feature_select(const AdapterParams& a, const Tensor& hidden_top, const Tensor& xi) {
    if (hidden_top.shape.size() != 2 || hidden_top.shape[1] != a.dim)
        throw ContractError("feature_select: hidden state width does not match adapter dim");
    if (xi.shape != std::vector<int64_t>{a.dim})
        throw ContractError("feature_select: anchor has wrong dimension");
    const int S = (int)hidden_top.shape[0];
    const int d = a.dim;
    Tensor pz({S, d});
    kernels::matmul_nt(pz.ptr(), hidden_top.data.data(), p(a.ema, "select.p").data.data(), S, d, d);
    const double xin = std::sqrt(std::inner_product(xi.data.begin(), xi.data.end(), xi.data.begin(), 0.0));
    Tensor y({S, d});
    for (int i = 0; i < S; ++i) {
        const double* zi = hidden_top.data.data() + (size_t)i * d;
        double dot = 0.0, nn = 0.0;
        for (int e = 0; e < d; ++e) {
            dot += zi[e] * xi.data[e];
            nn += zi[e] * zi[e];
        }
        const double zn = std::sqrt(nn);
        const double s = (zn > 0.0 && xin > 0.0) ? dot / (zn * xin) : 0.0;
        const double* pzi = pz.data.data() + (size_t)i * d;
        double* yi = y.ptr() + (size_t)i * d;
        for (int e = 0; e < d; ++e) yi[e] = s * pzi[e];
    }
    return y;
}

Feedback feedback_stack(const AdapterParams& a, const Tensor& selected) {
    if (selected.shape.size() != 2 || selected.shape[1] != a.dim)
        throw ContractError("feedback_stack: selected features have wrong width");
    const int S = (int)selected.shape[0];
    const int d = a.dim;
    Feedback sig(a.layers);
    Tensor pre({S, d}), act({S, d});
    const Tensor* h = &selected;
    for (int l = 0; l < a.layers; ++l) {
        kernels::matmul_nt(pre.ptr(), h->data.data(), p(a.ema, fb(l, ".w1")).data.data(), S, d, d);
        kernels::add_bias(pre.ptr(), p(a.ema, fb(l, ".b1")).data.data(), S, d);
        kernels::gelu_fwd(act.ptr(), pre.data.data(), (size_t)S * d);
        sig[l] = Tensor({S, d});
        kernels::matmul_nt(sig[l].ptr(), act.data.data(), p(a.ema, fb(l, ".w2")).data.data(), S, d, d);
        kernels::add_bias(sig[l].ptr(), p(a.ema, fb(l, ".b2")).data.data(), S, d);
        h = &sig[l];
    }
    return sig;
}

double feedback_reg(const Feedback& signals) {
    if (signals.empty()) return 0.0;
    double ss = 0.0;
    size_t n = 0;
    for (const Tensor& s : signals) {
        for (double v : s.data) ss += v * v;
        n += s.data.size();
    }
    return n ? ss / (double)n : 0.0;
}

SmoothedOutput smoothed_from_hidden(const GeneratorParams& gen, const AdapterParams& a,
                                    const Tensor& hidden_top, const TokenGrid& shape_like,
                                    int class_id) {
    check_pairing(gen, a);
    AdapterActs acts;
    adapter_fwd(a.ema, a.layers, a.dim, hidden_top, class_id, acts);
    ForwardOutput fo = forward(gen.config, gen.ema, blank_canvas(shape_like), class_id, &acts.sig);
    SmoothedOutput out;
    out.logits_bar = std::move(fo.logits);
    out.signals = std::move(acts.sig);
    out.reg_value = acts.reg;
    return out;
}

SmoothedOutput smoothed_forward(const GeneratorParams& gen, const AdapterParams& a,
                                const TokenGrid& x_stage1, int class_id) {
    check_pairing(gen, a);
    ForwardOutput fo1 = forward(gen.config, gen.ema, x_stage1, class_id);
    return smoothed_from_hidden(gen, a, fo1.hidden[gen.config.layers], x_stage1, class_id);
}

double aux_loss(const Tensor& logits_bar, const TokenGrid& x0, const MaskState& m, double reg_value,
                double lambda) {
    if (reg_value < 0.0)
        throw ContractError("aux_loss: regularizer value must be non-negative");
    return masked_loss(logits_bar, x0, m) + lambda * reg_value;
}

double aux_loss_and_grads(const GeneratorParams& gen, const AdapterParams& a,
                          const TokenGrid& x_stage1, int class_id, const TokenGrid& x0,
                          const MaskState& m, TensorMap* grads) {
    check_pairing(gen, a);
    const int L = a.layers, d = a.dim;
    const double lambda = a.config.lambda;

    ForwardOutput fo1 = forward(gen.config, gen.ema, x_stage1, class_id);
    AdapterActs acts;
    adapter_fwd(a.live, L, d, fo1.hidden[L], class_id, acts);

    Feedback dfb;
    const double nll = loss_and_grads(gen.config, gen.ema, blank_canvas(x_stage1), class_id, x0, m,
                                      nullptr, &acts.sig, grads ? &dfb : nullptr);
    if (grads) {
        const double reg_scale = lambda * 2.0 / ((double)L * acts.sig[0].numel());
        for (int l = 0; l < L; ++l)
            for (size_t i = 0; i < dfb[l].data.size(); ++i)
                dfb[l].data[i] += reg_scale * acts.sig[l].data[i];
        adapter_bwd(a.live, L, d, acts, dfb, *grads);
    }
    return nll + lambda * acts.reg;
}

AdapterParams finetune(const GeneratorParams& gen, const LabeledImageSet& dataset, const Codebook& cb,
                       const AdapterConfig& cfg, uint64_t seed, const StepLogger& logger) {
    cfg.validate();
    gen.config.validate();
    if (dataset.images.empty())
        throw ConfigError("finetune: dataset is empty");
    if (dataset.classes != gen.config.classes)
        throw ConfigError("finetune: dataset classes do not match generator classes");
    if (cb.k != gen.config.vocab_k)
        throw ConfigError("finetune: codebook size does not match generator vocab");

    const std::string digest_before = params_digest(gen);

    const size_t count = dataset.images.size();
    std::vector<TokenGrid> toks(count);
    for (size_t i = 0; i < count; ++i) toks[i] = tokenize(dataset.images[i], cb);
    if ((int)toks[0].tokens.size() != gen.config.n_tokens)
        throw ConfigError("finetune: tokenizer output does not match generator token count");

    AdapterParams a = init_adapter(gen.config, cfg, seed);

    const int N = gen.config.n_tokens;
    const int steps_per_epoch = (int)((count + cfg.batch - 1) / cfg.batch);
    const int total_steps = cfg.epochs * steps_per_epoch;

    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = 0.0;
    opt.warmup = cfg.warmup;
    opt.total_steps = total_steps;
    opt.init(a.live);

    TensorMap grads = zeros_like(a.live);
    int gstep = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(count);
        for (size_t i = 0; i < count; ++i) order[i] = i;
        Rng er = fork_rng(seed, "ft-epoch", (uint64_t)epoch);
        for (size_t i = count; i > 1; --i)
            std::swap(order[i - 1], order[er.uniform_int(i)]);

        for (int s = 0; s < steps_per_epoch; ++s, ++gstep) {
            const auto t0 = std::chrono::steady_clock::now();
            const size_t begin = (size_t)s * cfg.batch;
            const size_t end = std::min(count, begin + cfg.batch);
            for (auto& [name, g] : grads) g.zero();
            double loss_sum = 0.0;

            for (size_t j = begin; j < end; ++j) {
                const size_t idx = order[j];
                Rng ir = fork_rng(seed, "ft-item", (uint64_t)gstep, (uint64_t)(j - begin));
                const double u = ir.uniform_closed_top();
                int n_mask = (int)std::ceil(mask_ratio(u) * N);
                n_mask = std::clamp(n_mask, 1, N);
                auto [x_t, mstate] = apply_random_mask(toks[idx], n_mask, ir.next_u64());
                const TokenGrid z_t = corrupt_with_errors(x_t, mstate, {cfg.error_rate, ir.next_u64()});
                const int label = dataset.labels[idx];

                loss_sum += aux_loss_and_grads(gen, a, z_t, label, toks[idx], mstate, &grads);
            }

            const double inv_b = 1.0 / (double)(end - begin);
            for (auto& [name, g] : grads)
                for (double& x : g.data) x *= inv_b;
            const double loss = loss_sum * inv_b;
            if (!std::isfinite(loss))
                throw TrainingDivergence("adapter loss became non-finite at step " + std::to_string(gstep));
            const double lr_used = opt.lr_at(opt.t);
            opt.step(a.live, grads);
            ema_update(a.ema, a.live, cfg.ema_decay);
            if (logger) {
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                logger(gstep, loss, lr_used, ms);
            }
        }
    }

    if (params_digest(gen) != digest_before)
        throw ContractError("finetune: generator parameters changed under the freeze");
    a.backbone_digest = digest_before;
    return a;
}

Container adapter_to_container(const AdapterParams& a, std::map<std::string, std::string> extra_meta) {
    Container c;
    c.tensors = a.live;
    for (const auto& [name, t] : a.ema) c.tensors["ema." + name] = t;
    c.meta["kind"] = "adapter";
    c.meta["config"] = adapter_config_to_json(a.config).dump();
    c.meta["dims"] = json{{"layers", a.layers}, {"dim", a.dim}, {"classes", a.classes}}.dump();
    c.meta["backbone_digest"] = a.backbone_digest;
    for (auto& [k, v] : extra_meta) c.meta[k] = std::move(v);
    return c;
}

AdapterParams adapter_from_container(const Container& c) {
    auto kind = c.meta.find("kind");
    if (kind == c.meta.end() || kind->second != "adapter")
        throw IoError("checkpoint is not an adapter checkpoint");
    AdapterParams a;
    try {
        a.config = adapter_config_from_json(json::parse(c.meta.at("config")));
        const json dims = json::parse(c.meta.at("dims"));
        a.layers = dims.at("layers").get<int>();
        a.dim = dims.at("dim").get<int>();
        a.classes = dims.at("classes").get<int>();
    } catch (const std::out_of_range&) {
        throw IoError("adapter checkpoint is missing metadata");
    } catch (const json::exception& e) {
        throw IoError(std::string("adapter checkpoint metadata is malformed: ") + e.what());
    }
    if (auto it = c.meta.find("backbone_digest"); it != c.meta.end()) a.backbone_digest = it->second;
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("ema.", 0) == 0)
            a.ema[name.substr(4)] = t;
        else
            a.live[name] = t;
    }
    if (a.live.empty() || a.live.size() != a.ema.size())
        throw IoError("adapter checkpoint has mismatched live/EMA tensor sets");
    return a;
}

} // namespace maskgen
