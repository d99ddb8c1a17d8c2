#pragma once

#include "maskgen/run_config.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maskgen {

// Pipeline commands behind the CLI. Each one owns a subdirectory of the run
// root, writes the resolved config there, and raises an actionable error
// when an upstream artifact is missing. Layout under <out>:
//   dataset/   manifest.json, class_XX/img_XXXXX.png
//   tokenizer/ codebook.ntc
//   train/     generator.ntc, log.jsonl
//   finetune/  adapter.ntc, log.jsonl
//   sample/    tokens_cXX_NNN.txt, trace.jsonl, grid.png
//   eval/      feature_net.ntc, report.json
//   sweep/     sweep.tsv, curve_<mode>.tsv

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path dataset_dir() const { return root / "dataset"; }
    std::filesystem::path codebook_file() const { return root / "tokenizer" / "codebook.ntc"; }
    std::filesystem::path generator_file() const { return root / "train" / "generator.ntc"; }
    std::filesystem::path adapter_file() const { return root / "finetune" / "adapter.ntc"; }
    std::filesystem::path sample_dir() const { return root / "sample"; }
    std::filesystem::path eval_dir() const { return root / "eval"; }
    std::filesystem::path feature_net_file() const { return eval_dir() / "feature_net.ntc"; }
    std::filesystem::path sweep_dir() const { return root / "sweep"; }
    std::filesystem::path sweep_table() const { return sweep_dir() / "sweep.tsv"; }
};

int cmd_dataset(const RunConfig& cfg);
int cmd_tokenizer(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_finetune(const RunConfig& cfg);
int cmd_sample(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

// One record per sweep grid point, keyed by (mode, scale, tau, steps, seed).
struct SweepRow {
    std::string mode;
    double scale = 0.0;
    double tau = 0.0;
    int steps = 0;
    double fid = 0.0;
    double is_score = 1.0;
    double precision = 0.0;
    double recall = 0.0;
    int nfe = 0;
    double wall_s = 0.0;
    uint64_t seed = 0;
};

// Missing file reads as empty. Appends rewrite the whole table through a
// temp file + rename so a crash never leaves a torn row.
std::vector<SweepRow> read_sweep_table(const std::filesystem::path& path);
void append_sweep_row(const std::filesystem::path& path, const SweepRow& row);
bool sweep_point_done(const std::vector<SweepRow>& rows, const std::string& mode, double scale,
                      double tau, int steps, uint64_t seed);

// Plain-text token grid, the exact-reproducibility artifact.
void write_token_file(const std::filesystem::path& path, const TokenGrid& grid);
TokenGrid read_token_file(const std::filesystem::path& path);

} // namespace maskgen
