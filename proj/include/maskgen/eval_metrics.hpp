#pragma once

#include "maskgen/data_tokens.hpp"
#include "maskgen/generator.hpp"
#include "maskgen/image.hpp"
#include "maskgen/tensor.hpp"
#include "maskgen/tensor_container.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace maskgen {

// Desk-scale sample-quality metrics. A small convolutional classifier
// trained on the synthetic dataset stands in for the usual pretrained
// feature extractor; Frechet distance, an inception-score analog and
// k-NN precision/recall are computed in its 64-d feature space. Absolute
// values are not comparable to published large-scale numbers; only relative
// comparisons between sampling configurations are meaningful.

struct FeatureNetConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 2e-3;
    int warmup = 20;
    double holdout_frac = 0.2;
    double accuracy_gate = 0.9;
    void validate() const;
};

struct FeatureNet {
    static constexpr int feature_dim = 64;
    TensorMap params;
    int classes = 0;
    int h = 0, w = 0;   // input size the net was trained on
    uint64_t train_seed = 0;
    double holdout_accuracy = 0.0;
};

struct MetricsReport {
    double desk_fid = 0.0;
    double desk_is = 1.0;
    double precision = 0.0;
    double recall = 0.0;
    int n_real = 0;
    int n_gen = 0;
    int knn_k = 3;
    std::string config_digest;
    std::string note;
};

// Trains to the held-out accuracy gate; anything less throws
// EvalUnavailableError since metrics in an untrained feature space are noise.
FeatureNet train_feature_classifier(const LabeledImageSet& dataset, uint64_t seed,
                                    const FeatureNetConfig& cfg = {}, const StepLogger& logger = nullptr);

double feature_net_accuracy(const FeatureNet& net, const std::vector<Image>& images,
                            const std::vector<int>& labels);

// [M, 64] pooled features and [M, C] softmax class probabilities.
Tensor extract_features(const FeatureNet& net, const std::vector<Image>& images);
Tensor class_probs(const FeatureNet& net, const std::vector<Image>& images);

// |mu_a - mu_b|^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}), with ridge
// 1e-6 on both covariances and negative-eigenvalue clamping.
double frechet_from_moments(const Tensor& mu_a, const Tensor& cov_a, const Tensor& mu_b,
                            const Tensor& cov_b);
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

// exp(mean KL(row || mean row)); rows must be normalized within 1e-5.
double inception_score_analog(const Tensor& probs);

// k-NN manifold coverage: precision = share of generated points inside some
// k-NN ball of the real set; recall swaps the roles.
std::pair<double, double> precision_recall(const Tensor& real_feats, const Tensor& gen_feats, int k = 3);

Container feature_net_to_container(const FeatureNet& net);
FeatureNet feature_net_from_container(const Container& c);
std::string feature_net_digest(const FeatureNet& net);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& s);

} // namespace maskgen
