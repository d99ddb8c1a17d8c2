#pragma once

#include "maskgen/adapter.hpp"
#include "maskgen/generator.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace maskgen {

// Iterative predict-mask decoding. Starting from an all-MASK canvas, each
// step predicts every masked token, samples, and re-masks the least
// confident positions per the shrinking schedule. Guidance sharpens the
// sampling distribution by playing the main prediction against a weaker
// second one: the adapter's smoothed pass (self), the null-class pass (cfg)
// or spatially blurred logits (blur).

enum class GuidanceMode { none, self, cfg, blur };

const char* mode_name(GuidanceMode m);
GuidanceMode mode_from_name(const std::string& name);

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::none;
    double scale = 0.0;        // s; sharpens for s > 0, s = -1 flips to the weak distribution
    double temperature = 4.5;  // tau; scales the Gumbel noise on mask selection
    int steps = 18;            // T
    double blur_sigma = 1.0;   // blur mode only
    uint64_t seed = 0;
    bool argmax_tokens = false;  // ablation: argmax instead of categorical sampling

    bool pure_smoothed() const { return scale == -1.0; }
    void validate() const;
};

struct StepRecord {
    int t = 0;
    int n_masked_after = 0;
    std::vector<int> newly_fixed;
    double mean_confidence = 0.0;
    int nfe_after = 0;
};

struct SampleTrace {
    std::vector<StepRecord> steps;
    TokenGrid final_grid;
    int total_nfe = 0;
    std::string nfe_note;  // set when the mode's NFE differs from the forward-pass count story
};

// log p_tilde = log p_bar + (1+s) (log p_hat - log p_bar), renormalized per
// row. s=0 and rows with zero guidance difference return log p_hat exactly.
Tensor guided_combine(const Tensor& logp_hat, const Tensor& logp_bar, double s);
// Same algebra with (conditional, unconditional) in the two slots.
Tensor cfg_combine(const Tensor& logp_cond, const Tensor& logp_uncond, double s);

// Per-category Gaussian blur of the logits over their r x c spatial grid.
Tensor blur_logits(const Tensor& logits, int rows, int cols, double sigma);

// Keeps the (N - n_{t-1}) most confident positions unmasked. Confidence is
// log p_tilde of the sampled token, +inf at already-fixed positions, and is
// perturbed by tau * (t/T) * Gumbel noise. Ties break toward the lower index.
MaskState select_mask(const Tensor& logp_tilde, const TokenGrid& sampled, const MaskState& prev,
                      int t, int total_steps, double tau, uint64_t seed);

struct StepResult {
    TokenGrid x;
    MaskState m;
    StepRecord rec;
};

StepResult sample_step(const TokenGrid& x_t, const MaskState& m_t, int t, int class_id,
                       const GeneratorParams& gen, const AdapterParams* adapter,
                       const GuidanceConfig& cfg, int nfe_so_far);

// Full decode; grid shape rows x cols must multiply to the generator's token
// count. The adapter is required exactly for mode=self.
std::pair<TokenGrid, SampleTrace> generate(int class_id, const GeneratorParams& gen,
                                           const AdapterParams* adapter, const GuidanceConfig& cfg,
                                           int rows, int cols);

} // namespace maskgen
