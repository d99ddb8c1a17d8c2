#pragma once

#include "maskgen/generator.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace maskgen {

// Top-down feedback adapter over a frozen generator. A class anchor plus a
// token/channel selection compress the generator's top hidden state; a stack
// of feedback MLPs turns the compressed features into per-layer signals that
// steer a second, blank-canvas pass. The second pass yields the smoothed
// prediction used as the weak distribution during guided sampling.

struct AdapterConfig {
    double lambda = 1e-3;     // weight of the signal-energy regularizer
    double error_rate = 0.3;  // token corruption probability during fine-tuning
    double lr = 1e-4;
    int epochs = 10;
    int batch = 64;
    int warmup = 100;
    double ema_decay = 0.9999;
    void validate() const;
};

struct AdapterParams {
    AdapterConfig config;
    int layers = 0;  // mirrored from the generator
    int dim = 0;
    int classes = 0;
    TensorMap live;
    TensorMap ema;
    std::string backbone_digest;  // digest of the generator this adapter was tuned against
};

struct SmoothedOutput {
    Tensor logits_bar;  // [N, K]
    Feedback signals;   // L signals of [N+1, dim]
    double reg_value = 0.0;
};

// Throws ConfigError when the adapter/generator parameter-count ratio leaves
// [0.15, 0.30].
AdapterParams init_adapter(const GeneratorConfig& gen_cfg, const AdapterConfig& cfg, uint64_t seed);
double adapter_param_ratio(const AdapterParams& a, int64_t gen_param_count);

// All three read the EMA tensors, matching inference behaviour.
Tensor class_anchor(const AdapterParams& a, int class_id);
Tensor feature_select(const AdapterParams& a, const Tensor& hidden_top, const Tensor& xi);
Feedback feedback_stack(const AdapterParams& a, const Tensor& selected);

// Mean squared signal element; the variational regularizer value.
double feedback_reg(const Feedback& signals);

SmoothedOutput smoothed_from_hidden(const GeneratorParams& gen, const AdapterParams& a,
                                    const Tensor& hidden_top, const TokenGrid& shape_like,
                                    int class_id);
SmoothedOutput smoothed_forward(const GeneratorParams& gen, const AdapterParams& a,
                                const TokenGrid& x_stage1, int class_id);

double aux_loss(const Tensor& logits_bar, const TokenGrid& x0, const MaskState& m, double reg_value,
                double lambda);

// One auxiliary-task item end to end: stage-1 forward on x_stage1, adapter on
// the top hidden state, stage-2 forward on the blank canvas with feedback,
// masked NLL on x0 plus the signal regularizer. Accumulates adapter-parameter
// gradients (for a.live) into *grads when given; backbone gradients are never
// formed. This is the unit finetune() averages over a batch.
double aux_loss_and_grads(const GeneratorParams& gen, const AdapterParams& a,
                          const TokenGrid& x_stage1, int class_id, const TokenGrid& x0,
                          const MaskState& m, TensorMap* grads);

// Fine-tunes adapter parameters against the frozen generator on the masked +
// corrupted reconstruction task. Generator tensors are never touched.
AdapterParams finetune(const GeneratorParams& gen, const LabeledImageSet& dataset, const Codebook& cb,
                       const AdapterConfig& cfg, uint64_t seed, const StepLogger& logger = nullptr);

Container adapter_to_container(const AdapterParams& a, std::map<std::string, std::string> extra_meta = {});
AdapterParams adapter_from_container(const Container& c);

} // namespace maskgen
