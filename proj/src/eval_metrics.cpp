#include "maskgen/eval_metrics.hpp"

#include "maskgen/error.hpp"
#include "maskgen/kernels.hpp"
#include "maskgen/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

namespace maskgen {

using nlohmann::json;

void FeatureNetConfig::validate() const {
    if (epochs < 1 || batch < 1 || warmup < 0)
        throw ConfigError("feature net: epochs and batch must be positive, warmup non-negative");
    if (lr <= 0.0)
        throw ConfigError("feature net: lr must be positive");
    if (holdout_frac <= 0.0 || holdout_frac >= 1.0)
        throw ConfigError("feature net: holdout fraction must lie in (0, 1)");
    if (accuracy_gate < 0.0 || accuracy_gate > 1.0)
        throw ConfigError("feature net: accuracy gate must lie in [0, 1]");
}

namespace {

constexpr int kC1 = 16, kC2 = 32, kC3 = 64;

TensorMap init_feature_net(int classes, uint64_t seed) {
    Rng rng = fork_rng(seed, "featnet-init");
    TensorMap m;
    auto normal = [&](const std::string& name, std::vector<int64_t> shape, double std_dev) {
        Tensor t(std::move(shape));
        t.fill_normal(rng, std_dev);
        m[name] = std::move(t);
    };
    // He-style scaling keeps activations in range through the stack
    normal("conv1.w", {kC1, 3, 3, 3}, std::sqrt(2.0 / (3 * 9)));
    m["conv1.b"] = Tensor({kC1});
    normal("conv2.w", {kC2, kC1, 3, 3}, std::sqrt(2.0 / (kC1 * 9)));
    m["conv2.b"] = Tensor({kC2});
    normal("conv3.w", {kC3, kC2, 3, 3}, std::sqrt(2.0 / (kC2 * 9)));
    m["conv3.b"] = Tensor({kC3});
    normal("head.w", {classes, kC3}, 0.02);
    m["head.b"] = Tensor({classes});
    return m;
}

struct NetActs {
    Tensor x0;              // [3, h, w]
    Tensor c1, a1, p1;      // [16, h, w], pooled [16, h/2, w/2]
    Tensor c2, a2, p2;
    Tensor c3, a3;
    Tensor feat;            // [64]
    Tensor logits;          // [C]
};

void net_forward(const TensorMap& params, const Image& img, int classes, NetActs& acts) {
    const int h = img.h, w = img.w;
    if (h % 4 != 0 || w % 4 != 0)
        throw ContractError("feature net: image sides must be divisible by 4");
    acts.x0 = Tensor({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                acts.x0.data[((size_t)c * h + i) * w + j] = img.rgb[((size_t)i * w + j) * 3 + c];

    acts.c1 = Tensor({kC1, h, w});
    kernels::conv3x3_fwd(acts.c1.ptr(), acts.x0.data.data(), at(params, "conv1.w").data.data(),
                         at(params, "conv1.b").data.data(), 3, kC1, h, w);
    acts.a1 = Tensor({kC1, h, w});
    kernels::gelu_fwd(acts.a1.ptr(), acts.c1.data.data(), acts.c1.numel());
    const int h2 = h / 2, w2 = w / 2;
    acts.p1 = Tensor({kC1, h2, w2});
    kernels::avgpool2_fwd(acts.p1.ptr(), acts.a1.data.data(), kC1, h, w);

    acts.c2 = Tensor({kC2, h2, w2});
    kernels::conv3x3_fwd(acts.c2.ptr(), acts.p1.data.data(), at(params, "conv2.w").data.data(),
                         at(params, "conv2.b").data.data(), kC1, kC2, h2, w2);
    acts.a2 = Tensor({kC2, h2, w2});
    kernels::gelu_fwd(acts.a2.ptr(), acts.c2.data.data(), acts.c2.numel());
    const int h4 = h2 / 2, w4 = w2 / 2;
    acts.p2 = Tensor({kC2, h4, w4});
    kernels::avgpool2_fwd(acts.p2.ptr(), acts.a2.data.data(), kC2, h2, w2);

    acts.c3 = Tensor({kC3, h4, w4});
    kernels::conv3x3_fwd(acts.c3.ptr(), acts.p2.data.data(), at(params, "conv3.w").data.data(),
                         at(params, "conv3.b").data.data(), kC2, kC3, h4, w4);
    acts.a3 = Tensor({kC3, h4, w4});
    kernels::gelu_fwd(acts.a3.ptr(), acts.c3.data.data(), acts.c3.numel());

    acts.feat = Tensor({kC3});
    const double inv_sp = 1.0 / (h4 * w4);
    for (int c = 0; c < kC3; ++c) {
        double s = 0.0;
        const double* plane = acts.a3.data.data() + (size_t)c * h4 * w4;
        for (int i = 0; i < h4 * w4; ++i) s += plane[i];
        acts.feat.data[c] = s * inv_sp;
    }

    acts.logits = Tensor({classes});
    kernels::matmul_nt(acts.logits.ptr(), acts.feat.data.data(),
                       at(params, "head.w").data.data(), 1, classes, kC3);
    kernels::add_bias(acts.logits.ptr(), at(params, "head.b").data.data(), 1, classes);
}

double net_backward(const TensorMap& params, const NetActs& acts, int label, int classes,
                    TensorMap& grads) {
    const int h = (int)acts.x0.shape[1], w = (int)acts.x0.shape[2];
    const int h2 = h / 2, w2 = w / 2, h4 = h2 / 2, w4 = w2 / 2;

    Tensor probs({classes});
    kernels::softmax_rows(probs.ptr(), acts.logits.data.data(), 1, classes);
    const double loss = -std::log(std::max(probs.data[label], 1e-300));
    Tensor dlogits = probs;
    dlogits.data[label] -= 1.0;

    kernels::matmul_tn_acc(at(grads, "head.w").ptr(), dlogits.ptr(), acts.feat.data.data(), 1, kC3, classes);
    kernels::bias_grad_acc(at(grads, "head.b").ptr(), dlogits.ptr(), 1, classes);
    Tensor dfeat({kC3});
    kernels::matmul_nn(dfeat.ptr(), dlogits.ptr(), at(params, "head.w").data.data(), 1, kC3, classes);

    Tensor da3({kC3, h4, w4});
    const double inv_sp = 1.0 / (h4 * w4);
    for (int c = 0; c < kC3; ++c) {
        const double v = dfeat.data[c] * inv_sp;
        double* plane = da3.ptr() + (size_t)c * h4 * w4;
        for (int i = 0; i < h4 * w4; ++i) plane[i] = v;
    }
    Tensor dc3({kC3, h4, w4});
    dc3.zero();
    kernels::gelu_bwd(dc3.ptr(), da3.data.data(), acts.c3.data.data(), acts.c3.numel());
    Tensor dp2({kC2, h4, w4});
    dp2.zero();
    kernels::conv3x3_bwd(dp2.ptr(), at(grads, "conv3.w").ptr(), at(grads, "conv3.b").ptr(),
                         dc3.data.data(), acts.p2.data.data(),
                         at(params, "conv3.w").data.data(), kC2, kC3, h4, w4);

    Tensor da2({kC2, h2, w2});
    da2.zero();
    kernels::avgpool2_bwd(da2.ptr(), dp2.data.data(), kC2, h2, w2);
    Tensor dc2({kC2, h2, w2});
    dc2.zero();
    kernels::gelu_bwd(dc2.ptr(), da2.data.data(), acts.c2.data.data(), acts.c2.numel());
    Tensor dp1({kC1, h2, w2});
    dp1.zero();
    kernels::conv3x3_bwd(dp1.ptr(), at(grads, "conv2.w").ptr(), at(grads, "conv2.b").ptr(),
                         dc2.data.data(), acts.p1.data.data(),
                         at(params, "conv2.w").data.data(), kC1, kC2, h2, w2);

    Tensor da1({kC1, h, w});
    da1.zero();
    kernels::avgpool2_bwd(da1.ptr(), dp1.data.data(), kC1, h, w);
    Tensor dc1({kC1, h, w});
    dc1.zero();
    kernels::gelu_bwd(dc1.ptr(), da1.data.data(), acts.c1.data.data(), acts.c1.numel());
    kernels::conv3x3_bwd(nullptr, at(grads, "conv1.w").ptr(), at(grads, "conv1.b").ptr(),
                         dc1.data.data(), acts.x0.data.data(),
                         at(params, "conv1.w").data.data(), 3, kC1, h, w);
    return loss;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. evecs, when
// requested, holds V with A = V diag(evals) V^T, V[i*n+k] = component i of
// eigenvector k.
void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& evals, std::vector<double>* evecs) {
    std::vector<double> v;
    if (evecs) {
        v.assign((size_t)n * n, 0.0);
        for (int i = 0; i < n; ++i) v[(size_t)i * n + i] = 1.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[(size_t)p * n + q] * a[(size_t)p * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[(size_t)p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[(size_t)q * n + q] - a[(size_t)p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[(size_t)i * n + p];
                    const double aiq = a[(size_t)i * n + q];
                    a[(size_t)i * n + p] = c * aip - s * aiq;
                    a[(size_t)i * n + q] = s * aip + c * aiq;
                }
                for (int j = 0; j < n; ++j) {
                    const double apj = a[(size_t)p * n + j];
                    const double aqj = a[(size_t)q * n + j];
                    a[(size_t)p * n + j] = c * apj - s * aqj;
                    a[(size_t)q * n + j] = s * apj + c * aqj;
                }
                if (evecs)
                    for (int i = 0; i < n; ++i) {
                        const double vip = v[(size_t)i * n + p];
                        const double viq = v[(size_t)i * n + q];
                        v[(size_t)i * n + p] = c * vip - s * viq;
                        v[(size_t)i * n + q] = s * vip + c * viq;
                    }
            }
        }
    }
    evals.resize(n);
    for (int i = 0; i < n; ++i) evals[i] = a[(size_t)i * n + i];
    if (evecs) *evecs = std::move(v);
}

void moments(const Tensor& feats, Tensor& mu, Tensor& cov) {
    const int m = (int)feats.shape[0], f = (int)feats.shape[1];
    mu = Tensor({f});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < f; ++j) mu.data[j] += feats.data[(size_t)i * f + j];
    for (int j = 0; j < f; ++j) mu.data[j] /= m;
    cov = Tensor({f, f});
    std::vector<double> cent((size_t)m * f);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < f; ++j) cent[(size_t)i * f + j] = feats.data[(size_t)i * f + j] - mu.data[j];
    kernels::matmul_tn_acc(cov.ptr(), cent.data(), cent.data(), m, f, f);
    const double inv = 1.0 / (m - 1);
    for (double& x : cov.data) x *= inv;
}

} // namespace

FeatureNet train_feature_classifier(const LabeledImageSet& dataset, uint64_t seed,
                                    const FeatureNetConfig& cfg, const StepLogger& logger) {
    cfg.validate();
    const size_t count = dataset.images.size();
    if (dataset.classes < 2)
        throw ConfigError("feature net: need at least two classes");
    if (count < 10)
        throw ConfigError("feature net: dataset too small to split");

    std::vector<size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng sr = fork_rng(seed, "featnet-split");
    for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[sr.uniform_int(i)]);
    const size_t n_hold = std::max<size_t>(1, (size_t)(count * cfg.holdout_frac));
    const size_t n_train = count - n_hold;
    std::vector<size_t> train_idx(order.begin(), order.begin() + n_train);
    std::vector<size_t> hold_idx(order.begin() + n_train, order.end());

    FeatureNet net;
    net.classes = dataset.classes;
    net.h = dataset.height;
    net.w = dataset.width;
    net.train_seed = seed;
    net.params = init_feature_net(net.classes, seed);

    const int steps_per_epoch = (int)((n_train + cfg.batch - 1) / cfg.batch);
    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = 0.0;
    opt.warmup = cfg.warmup;
    opt.total_steps = cfg.epochs * steps_per_epoch;
    opt.init(net.params);
    TensorMap grads = zeros_like(net.params);

    int gstep = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng er = fork_rng(seed, "featnet-epoch", (uint64_t)epoch);
        std::vector<size_t> perm = train_idx;
        for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[er.uniform_int(i)]);
        for (int s = 0; s < steps_per_epoch; ++s, ++gstep) {
            const auto t0 = std::chrono::steady_clock::now();
            const size_t begin = (size_t)s * cfg.batch;
            const size_t end = std::min(perm.size(), begin + cfg.batch);
            for (auto& [name, g] : grads) g.zero();
            double loss_sum = 0.0;
            for (size_t j = begin; j < end; ++j) {
                NetActs acts;
                net_forward(net.params, dataset.images[perm[j]], net.classes, acts);
                loss_sum += net_backward(net.params, acts, dataset.labels[perm[j]], net.classes, grads);
            }
            const double inv_b = 1.0 / (double)(end - begin);
            for (auto& [name, g] : grads)
                for (double& x : g.data) x *= inv_b;
            const double loss = loss_sum * inv_b;
            if (!std::isfinite(loss))
                throw TrainingDivergence("feature net loss became non-finite at step " + std::to_string(gstep));
            const double lr_used = opt.lr_at(opt.t);
            opt.step(net.params, grads);
            if (logger) {
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                logger(gstep, loss, lr_used, ms);
            }
        }
    }

    std::vector<Image> hold_imgs;
    std::vector<int> hold_labels;
    for (size_t i : hold_idx) {
        hold_imgs.push_back(dataset.images[i]);
        hold_labels.push_back(dataset.labels[i]);
    }
    net.holdout_accuracy = feature_net_accuracy(net, hold_imgs, hold_labels);
    if (net.holdout_accuracy < cfg.accuracy_gate)
        throw EvalUnavailableError("feature classifier reached only " +
                                   std::to_string(net.holdout_accuracy) + " held-out accuracy (gate " +
                                   std::to_string(cfg.accuracy_gate) + "); metrics would be meaningless");
    return net;
}

double feature_net_accuracy(const FeatureNet& net, const std::vector<Image>& images,
                            const std::vector<int>& labels) {
    if (images.empty() || images.size() != labels.size())
        throw ContractError("accuracy: images and labels must pair up");
    size_t hits = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        NetActs acts;
        net_forward(net.params, images[i], net.classes, acts);
        int best = 0;
        for (int c = 1; c < net.classes; ++c)
            if (acts.logits.data[c] > acts.logits.data[best]) best = c;
        if (best == labels[i]) ++hits;
    }
    return (double)hits / images.size();
}

Tensor extract_features(const FeatureNet& net, const std::vector<Image>& images) {
    Tensor out({(int64_t)images.size(), FeatureNet::feature_dim});
    for (size_t i = 0; i < images.size(); ++i) {
        NetActs acts;
        net_forward(net.params, images[i], net.classes, acts);
        std::memcpy(out.ptr() + i * FeatureNet::feature_dim, acts.feat.data.data(),
                    sizeof(double) * FeatureNet::feature_dim);
    }
    return out;
}

Tensor class_probs(const FeatureNet& net, const std::vector<Image>& images) {
    Tensor out({(int64_t)images.size(), net.classes});
    for (size_t i = 0; i < images.size(); ++i) {
        NetActs acts;
        net_forward(net.params, images[i], net.classes, acts);
        kernels::softmax_rows(out.ptr() + i * net.classes, acts.logits.data.data(), 1, net.classes);
    }
    return out;
}

double frechet_from_moments(const Tensor& mu_a, const Tensor& cov_a, const Tensor& mu_b,
                            const Tensor& cov_b) {
    if (mu_a.shape.size() != 1 || mu_a.shape != mu_b.shape)
        throw ContractError("frechet: mean vectors must match");
    const int f = (int)mu_a.shape[0];
    if (cov_a.shape != std::vector<int64_t>{f, f} || cov_b.shape != cov_a.shape)
        throw ContractError("frechet: covariance shapes must be f x f");

    std::vector<double> A = cov_a.data, B = cov_b.data;
    for (int i = 0; i < f; ++i) {
        A[(size_t)i * f + i] += 1e-6;
        B[(size_t)i * f + i] += 1e-6;
    }

    std::vector<double> evals, evecs;
    jacobi_eigh(A, f, evals, &evecs);
    std::vector<double> Ah((size_t)f * f, 0.0);
    for (int k = 0; k < f; ++k) {
        const double s = std::sqrt(std::max(0.0, evals[k]));
        for (int i = 0; i < f; ++i) {
            const double vis = evecs[(size_t)i * f + k] * s;
            for (int j = 0; j < f; ++j) Ah[(size_t)i * f + j] += vis * evecs[(size_t)j * f + k];
        }
    }

    std::vector<double> tmp((size_t)f * f), M((size_t)f * f);
    kernels::matmul_nn(tmp.data(), Ah.data(), B.data(), f, f, f);
    kernels::matmul_nn(M.data(), tmp.data(), Ah.data(), f, f, f);
    for (int i = 0; i < f; ++i)
        for (int j = i + 1; j < f; ++j) {
            const double m = 0.5 * (M[(size_t)i * f + j] + M[(size_t)j * f + i]);
            M[(size_t)i * f + j] = m;
            M[(size_t)j * f + i] = m;
        }
    std::vector<double> mevals;
    jacobi_eigh(M, f, mevals, nullptr);
    double tr_sqrt = 0.0;
    for (double l : mevals) tr_sqrt += std::sqrt(std::max(0.0, l));

    double mean_term = 0.0;
    for (int i = 0; i < f; ++i) {
        const double d = mu_a.data[i] - mu_b.data[i];
        mean_term += d * d;
    }
    double tr_a = 0.0, tr_b = 0.0;
    for (int i = 0; i < f; ++i) {
        tr_a += A[(size_t)i * f + i];
        tr_b += B[(size_t)i * f + i];
    }
    return std::max(0.0, mean_term + tr_a + tr_b - 2.0 * tr_sqrt);
}

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
    if (feats_a.shape.size() != 2 || feats_b.shape.size() != 2 || feats_a.shape[1] != feats_b.shape[1])
        throw ContractError("frechet: feature matrices must share their width");
    const int f = (int)feats_a.shape[1];
    if (feats_a.shape[0] < f + 1 || feats_b.shape[0] < f + 1)
        throw DomainError("frechet: need at least f+1 samples per side for stable covariances");
    Tensor mu_a, cov_a, mu_b, cov_b;
    moments(feats_a, mu_a, cov_a);
    moments(feats_b, mu_b, cov_b);
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b);
}

double inception_score_analog(const Tensor& probs) {
    if (probs.shape.size() != 2 || probs.shape[0] < 1)
        throw ContractError("inception score: expected an M x C probability matrix");
    const int m = (int)probs.shape[0], c = (int)probs.shape[1];
    std::vector<double> pbar(c, 0.0);
    for (int i = 0; i < m; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double p = probs.data[(size_t)i * c + j];
            if (!std::isfinite(p) || p < 0.0)
                throw ContractError("inception score: rows must be probability vectors");
            row_sum += p;
        }
        if (std::abs(row_sum - 1.0) > 1e-5)
            throw ContractError("inception score: row is not normalized");
        for (int j = 0; j < c; ++j) pbar[j] += probs.data[(size_t)i * c + j];
    }
    for (double& x : pbar) x /= m;

    double kl_sum = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) {
            const double p = probs.data[(size_t)i * c + j];
            if (p > 0.0) kl_sum += p * (std::log(p) - std::log(pbar[j]));
        }
    return std::exp(kl_sum / m);
}

std::pair<double, double> precision_recall(const Tensor& real_feats, const Tensor& gen_feats, int k) {
    if (real_feats.shape.size() != 2 || gen_feats.shape.size() != 2 ||
        real_feats.shape[1] != gen_feats.shape[1])
        throw ContractError("precision/recall: feature matrices must share their width");
    const int f = (int)real_feats.shape[1];
    const int mr = (int)real_feats.shape[0], mg = (int)gen_feats.shape[0];
    if (k < 1)
        throw DomainError("precision/recall: k must be positive");
    if (mr < k + 1 || mg < k + 1)
        throw DomainError("precision/recall: need at least k+1 samples per side");

    auto radii = [&](const Tensor& pts, int m) {
        std::vector<double> d2((size_t)m * m);
        kernels::pairwise_dist2(d2.data(), pts.data.data(), m, pts.data.data(), m, f);
        std::vector<double> rad(m);
        std::vector<double> row(m - 1);
        for (int i = 0; i < m; ++i) {
            int n = 0;
            for (int j = 0; j < m; ++j)
                if (j != i) row[n++] = d2[(size_t)i * m + j];
            std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
            rad[i] = row[k - 1];
        }
        return rad;
    };

    const std::vector<double> rad_real = radii(real_feats, mr);
    const std::vector<double> rad_gen = radii(gen_feats, mg);

    std::vector<double> cross((size_t)mg * mr);
    kernels::pairwise_dist2(cross.data(), gen_feats.data.data(), mg, real_feats.data.data(), mr, f);

    int covered_gen = 0;
    for (int g = 0; g < mg; ++g)
        for (int r = 0; r < mr; ++r)
            if (cross[(size_t)g * mr + r] <= rad_real[r]) {
                ++covered_gen;
                break;
            }
    int covered_real = 0;
    for (int r = 0; r < mr; ++r)
        for (int g = 0; g < mg; ++g)
            if (cross[(size_t)g * mr + r] <= rad_gen[g]) {
                ++covered_real;
                break;
            }
    return {(double)covered_gen / mg, (double)covered_real / mr};
}

Container feature_net_to_container(const FeatureNet& net) {
    Container c;
    c.tensors = net.params;
    c.meta["kind"] = "feature_net";
    c.meta["meta"] = json{{"classes", net.classes},
                          {"h", net.h},
                          {"w", net.w},
                          {"train_seed", net.train_seed},
                          {"holdout_accuracy", net.holdout_accuracy}}
                         .dump();
    return c;
}

FeatureNet feature_net_from_container(const Container& c) {
    auto kind = c.meta.find("kind");
    if (kind == c.meta.end() || kind->second != "feature_net")
        throw IoError("checkpoint is not a feature-net checkpoint");
    FeatureNet net;
    try {
        const json j = json::parse(c.meta.at("meta"));
        net.classes = j.at("classes").get<int>();
        net.h = j.at("h").get<int>();
        net.w = j.at("w").get<int>();
        net.train_seed = j.at("train_seed").get<uint64_t>();
        net.holdout_accuracy = j.at("holdout_accuracy").get<double>();
    } catch (const std::out_of_range&) {
        throw IoError("feature-net checkpoint is missing metadata");
    } catch (const json::exception& e) {
        throw IoError(std::string("feature-net checkpoint metadata is malformed: ") + e.what());
    }
    net.params = c.tensors;
    return net;
}

std::string feature_net_digest(const FeatureNet& net) { return container_digest(feature_net_to_container(net)); }

std::string report_to_json(const MetricsReport& r) {
    return json{{"desk_fid", r.desk_fid},
                {"desk_is", r.desk_is},
                {"precision", r.precision},
                {"recall", r.recall},
                {"n_real", r.n_real},
                {"n_gen", r.n_gen},
                {"knn_k", r.knn_k},
                {"config_digest", r.config_digest},
                {"note", r.note}}
        .dump(2);
}

MetricsReport report_from_json(const std::string& s) {
    MetricsReport r;
    try {
        const json j = json::parse(s);
        r.desk_fid = j.at("desk_fid").get<double>();
        r.desk_is = j.at("desk_is").get<double>();
        r.precision = j.at("precision").get<double>();
        r.recall = j.at("recall").get<double>();
        r.n_real = j.at("n_real").get<int>();
        r.n_gen = j.at("n_gen").get<int>();
        r.knn_k = j.at("knn_k").get<int>();
        r.config_digest = j.at("config_digest").get<std::string>();
        r.note = j.at("note").get<std::string>();
    } catch (const json::exception& e) {
        throw IoError(std::string("metrics report is malformed: ") + e.what());
    }
    return r;
}

} // namespace maskgen
