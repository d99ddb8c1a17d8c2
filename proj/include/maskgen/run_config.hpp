#pragma once

#include "maskgen/adapter.hpp"
#include "maskgen/eval_metrics.hpp"
#include "maskgen/generator.hpp"
#include "maskgen/sampler.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maskgen {

// One JSON document drives the whole pipeline. Parsing is strict: an unknown
// key anywhere is a ConfigError, and every command writes the resolved
// document back into its run directory so artifacts are reproducible from
// config + seed alone.

struct DatasetSection {
    std::string kind = "shapes";  // "shapes" (procedural) or "folder" (ingest `source`)
    std::string source;
    int per_class = 200;
    int classes = 10;
    int height = 32;
    int width = 32;
    void validate() const;
};

struct TokenizerSection {
    int codebook_size = 128;
    int patch_h = 4;
    int patch_w = 4;
    int kmeans_iters = 50;
    void validate() const;
};

struct SamplingSection {
    GuidanceConfig guidance;
    int per_class = 4;
    int class_id = -1;  // -1 samples every class
    void validate() const;
};

struct EvalSection {
    int n_real = 2000;
    int n_gen = 2000;
    int knn_k = 3;
    FeatureNetConfig feature_net;
    void validate() const;
};

struct SweepSection {
    std::vector<std::string> modes = {"none", "self"};
    std::vector<double> scales = {1.0};
    std::vector<double> temperatures = {3.0, 4.5, 6.0};
    std::vector<int> steps = {18};
    std::vector<uint64_t> seeds = {1, 2, 3};
    int per_class = 25;
    void validate() const;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out = "runs/default";
    DatasetSection dataset;
    TokenizerSection tokenizer;
    GeneratorConfig generator;
    AdapterConfig adapter;
    // Optional pin: refuse to fine-tune or sample against a generator whose
    // parameter digest differs. Empty means unpinned.
    std::string backbone_digest;
    SamplingSection sampling;
    EvalSection eval;
    SweepSection sweep;

    void validate() const;
    std::filesystem::path out_dir() const { return std::filesystem::path(out); }
};

RunConfig config_from_text(const std::string& text);
std::string config_to_text(const RunConfig& c);

// Loads `path` (or defaults when empty), applies "dot.path=value" overrides
// in order, then --seed/--out when given, and re-validates. Override values
// parse as JSON when possible, otherwise as plain strings. MASKGEN_OUT
// supplies the output root when neither the config nor --out names one.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                         const uint64_t* seed_flag, const std::string* out_flag);

} // namespace maskgen
