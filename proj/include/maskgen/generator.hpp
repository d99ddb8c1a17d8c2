#pragma once

#include "maskgen/data_tokens.hpp"
#include "maskgen/mask_process.hpp"
#include "maskgen/rng.hpp"
#include "maskgen/tensor.hpp"
#include "maskgen/tensor_container.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace maskgen {

// Bidirectional masked-token transformer p_theta. Input is a (partially
// masked) token grid plus a class id carried by a prefix token; output is a
// full-vocabulary prediction at every content position. MASK is input-only:
// the head spans the K real tokens, so the model can never predict MASK.

struct GeneratorConfig {
    int layers = 6;
    int dim = 256;
    int heads = 8;
    int vocab_k = 128;   // codebook size K; input vocabulary is K+1 with MASK
    int n_tokens = 64;   // N content positions; sequence length is N+1
    int classes = 10;    // C; class table has C+1 rows, row C = null class
    double dropout = 0.0;
    double cond_dropout_prob = 0.0;  // class id replaced by null class during training
    // optimizer
    double lr = 3e-4;
    double weight_decay = 0.01;
    int steps = 50000;
    int batch = 64;
    int warmup = 500;
    double ema_decay = 0.9999;

    int seq() const { return n_tokens + 1; }
    int head_dim() const { return dim / heads; }
    int ff() const { return 4 * dim; }
    void validate() const;
};

struct GeneratorParams {
    GeneratorConfig config;
    TensorMap live;
    TensorMap ema;  // shadow copy; inference always reads this
};

struct ForwardOutput {
    Tensor logits;               // [N, K]
    std::vector<Tensor> hidden;  // L+1 residual-stream states of [N+1, dim]
};

// Top-down feedback: one signal per layer, each [N+1, dim]. Signal j is
// added to the value matrix of transformer layer (L-1-j), i.e. the first
// signal lands at the top layer.
using Feedback = std::vector<Tensor>;

TensorMap init_generator_params(const GeneratorConfig& cfg, uint64_t seed);
int64_t generator_param_count(const GeneratorConfig& cfg);

ForwardOutput forward(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& tokens,
                      int class_id, const Feedback* feedback = nullptr);

// Mean NLL of the true token over masked positions only. Logits at unmasked
// positions never contribute.
double masked_loss(const Tensor& logits, const TokenGrid& x0, const MaskState& m);
// Same, also writing d(loss)/d(logits) into dlogits (allocated by caller or resized here).
double masked_loss_grad(const Tensor& logits, const TokenGrid& x0, const MaskState& m, Tensor& dlogits);

// One full forward + backward for an input/target pair. Parameter gradients
// are accumulated into `grads` when non-null; gradients w.r.t. the injected
// feedback signals are written into `dfeedback` when non-null. Returns the loss.
double loss_and_grads(const GeneratorConfig& cfg, const TensorMap& params, const TokenGrid& x_t,
                      int class_id, const TokenGrid& x0, const MaskState& m, TensorMap* grads,
                      const Feedback* feedback = nullptr, Feedback* dfeedback = nullptr,
                      Rng* drop_rng = nullptr);

// AdamW with warmup + cosine decay, shared by generator training and adapter
// fine-tuning. Weight decay applies to the attention/MLP/head matrices only.
struct AdamW {
    double lr = 3e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup = 0;
    int total_steps = 1;
    TensorMap m;
    TensorMap v;
    int t = 0;

    void init(const TensorMap& params);
    double lr_at(int step) const;
    void step(TensorMap& params, const TensorMap& grads);
};

void ema_update(TensorMap& ema, const TensorMap& live, double decay);

using StepLogger = std::function<void(int step, double loss, double lr, double wall_ms)>;

GeneratorParams train_generator(const LabeledImageSet& dataset, const Codebook& cb,
                                const GeneratorConfig& cfg, uint64_t seed,
                                const StepLogger& logger = nullptr);

Container generator_to_container(const GeneratorParams& p, std::map<std::string, std::string> extra_meta = {});
GeneratorParams generator_from_container(const Container& c);

// Digest over the live+EMA tensor bytes; used by the frozen-backbone contract.
std::string params_digest(const GeneratorParams& p);

} // namespace maskgen
