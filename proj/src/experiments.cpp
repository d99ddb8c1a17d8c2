#include "maskgen/experiments.hpp"

#include "maskgen/error.hpp"
#include "maskgen/image.hpp"
#include "maskgen/rng.hpp"
#include "maskgen/tensor_container.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace maskgen {

using nlohmann::json;

namespace {

using clock_t_ = std::chrono::steady_clock;

double seconds_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

void write_resolved_config(const std::filesystem::path& dir, const RunConfig& cfg) {
    atomic_write_text(dir / "config.json", config_to_text(cfg));
}

void require_artifact(const std::filesystem::path& path, const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw IoError("missing " + path.string() + "; run `maskgen " + producer + "` first");
}

std::string fmt_key(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

LabeledImageSet load_dataset_checked(const RunPaths& paths) {
    require_artifact(paths.dataset_dir() / "manifest.json", "dataset");
    return load_dataset(paths.dataset_dir());
}

Codebook load_codebook_checked(const RunPaths& paths) {
    require_artifact(paths.codebook_file(), "tokenizer");
    return codebook_from_container(load_container(paths.codebook_file()));
}

GeneratorParams load_generator_checked(const RunPaths& paths, const RunConfig& cfg) {
    require_artifact(paths.generator_file(), "train");
    GeneratorParams gen = generator_from_container(load_container(paths.generator_file()));
    if (!cfg.backbone_digest.empty()) {
        std::string got = params_digest(gen);
        if (got != cfg.backbone_digest)
            throw ContractError("generator digest mismatch: config pins " + cfg.backbone_digest +
                                " but " + paths.generator_file().string() + " has " + got);
    }
    return gen;
}

AdapterParams load_adapter_checked(const RunPaths& paths, const GeneratorParams& gen) {
    require_artifact(paths.adapter_file(), "finetune");
    AdapterParams a = adapter_from_container(load_container(paths.adapter_file()));
    std::string gen_digest = params_digest(gen);
    if (a.backbone_digest != gen_digest)
        throw ContractError("adapter at " + paths.adapter_file().string() +
                            " was fine-tuned against generator digest " + a.backbone_digest +
                            ", but the loaded generator has digest " + gen_digest);
    return a;
}

StepLogger stdout_logger(const char* tag, int every) {
    return [tag, every](int step, double loss, double lr, double wall_ms) {
        if (step % every == 0 || step == 1)
            std::printf("%s step %d  loss %.4f  lr %.2e  %.0f ms\n", tag, step, loss, lr, wall_ms);
    };
}

StepLogger jsonl_logger(std::ofstream& out, const StepLogger& chain) {
    return [&out, chain](int step, double loss, double lr, double wall_ms) {
        out << json{{"step", step}, {"loss", loss}, {"lr", lr}, {"wall_ms", wall_ms}}.dump() << "\n";
        if (chain) chain(step, loss, lr, wall_ms);
    };
}

std::pair<int, int> grid_shape(const RunConfig& cfg) {
    return {cfg.dataset.height / cfg.tokenizer.patch_h, cfg.dataset.width / cfg.tokenizer.patch_w};
}

std::vector<int> classes_to_sample(const RunConfig& cfg) {
    if (cfg.sampling.class_id >= 0) return {cfg.sampling.class_id};
    std::vector<int> all(cfg.generator.classes);
    for (int c = 0; c < cfg.generator.classes; ++c) all[c] = c;
    return all;
}

FeatureNet ensure_feature_net(const RunPaths& paths, const RunConfig& cfg,
                              const LabeledImageSet& data) {
    auto path = paths.feature_net_file();
    if (std::filesystem::exists(path)) {
        FeatureNet net = feature_net_from_container(load_container(path));
        if (net.classes != data.classes || net.h != data.height || net.w != data.width)
            throw ContractError("feature net at " + path.string() +
                                " was trained for a different dataset shape; delete it to retrain");
        return net;
    }
    std::printf("training evaluation feature net (gate %.2f)\n", cfg.eval.feature_net.accuracy_gate);
    FeatureNet net = train_feature_classifier(data, derive_seed(cfg.seed, "featnet"),
                                              cfg.eval.feature_net);
    std::filesystem::create_directories(path.parent_path());
    save_container(path, feature_net_to_container(net));
    std::printf("feature net holdout accuracy %.3f\n", net.holdout_accuracy);
    return net;
}

// Real-side eval pool: a seed-derived subset when the dataset is larger than
// n_real, the whole set otherwise.
std::vector<Image> real_eval_images(const LabeledImageSet& data, int n_real, uint64_t master) {
    int count = static_cast<int>(data.images.size());
    int n = std::min(n_real, count);
    Rng rng = fork_rng(master, "eval-real");
    auto pick = rng.sample_without_replacement(static_cast<uint32_t>(count),
                                              static_cast<uint32_t>(n));
    std::vector<Image> out;
    out.reserve(pick.size());
    for (uint32_t idx : pick) out.push_back(data.images[idx]);
    return out;
}

struct GenBatch {
    std::vector<Image> images;
    int nfe_per_sample = 0;
};

// Draws `total` class-balanced samples; seeds derive from (master, role, i).
GenBatch generate_batch(const RunConfig& cfg, const GeneratorParams& gen,
                        const AdapterParams* adapter, GuidanceConfig g, const Codebook& cb,
                        int total, uint64_t master, const char* role) {
    auto [rows, cols] = grid_shape(cfg);
    GenBatch batch;
    batch.images.reserve(total);
    for (int i = 0; i < total; ++i) {
        int class_id = i % cfg.generator.classes;
        g.seed = derive_seed(master, role, static_cast<uint64_t>(i));
        auto [grid, trace] = generate(class_id, gen, adapter, g, rows, cols);
        batch.images.push_back(detokenize(grid, cb));
        batch.nfe_per_sample = trace.total_nfe;
    }
    return batch;
}

std::string sweep_header() {
    return "mode\tscale\ttau\tsteps\tfid\tis\tprecision\trecall\tnfe\twall_s\tseed\n";
}

std::string sweep_row_line(const SweepRow& r) {
    std::ostringstream os;
    os << r.mode << '\t' << fmt_key(r.scale) << '\t' << fmt_key(r.tau) << '\t' << r.steps << '\t'
       << fmt_metric(r.fid) << '\t' << fmt_metric(r.is_score) << '\t' << fmt_metric(r.precision)
       << '\t' << fmt_metric(r.recall) << '\t' << r.nfe << '\t' << fmt_metric(r.wall_s) << '\t'
       << r.seed << '\n';
    return os.str();
}

void write_curve_files(const std::filesystem::path& dir, const std::vector<SweepRow>& rows) {
    // tau-parameterized quality/diversity curves, one file per mode, seeds
    // averaged at each operating point.
    std::map<std::string, std::map<std::tuple<double, double, int>, std::vector<const SweepRow*>>>
        by_mode;
    for (const auto& r : rows) by_mode[r.mode][{r.tau, r.scale, r.steps}].push_back(&r);
    for (const auto& [mode, points] : by_mode) {
        std::ostringstream os;
        os << "tau\tscale\tsteps\tfid_mean\tis_mean\tprecision_mean\trecall_mean\tn_seeds\n";
        for (const auto& [key, group] : points) {
            double fid = 0, is = 0, prec = 0, rec = 0;
            for (const SweepRow* r : group) {
                fid += r->fid;
                is += r->is_score;
                prec += r->precision;
                rec += r->recall;
            }
            double n = static_cast<double>(group.size());
            os << fmt_key(std::get<0>(key)) << '\t' << fmt_key(std::get<1>(key)) << '\t'
               << std::get<2>(key) << '\t' << fmt_metric(fid / n) << '\t' << fmt_metric(is / n)
               << '\t' << fmt_metric(prec / n) << '\t' << fmt_metric(rec / n) << '\t'
               << group.size() << '\n';
        }
        atomic_write_text(dir / ("curve_" + mode + ".tsv"), os.str());
    }
}

} // namespace

int cmd_dataset(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set;
    if (cfg.dataset.kind == "shapes") {
        DatasetSpec spec;
        spec.count = cfg.dataset.per_class * cfg.dataset.classes;
        spec.classes = cfg.dataset.classes;
        spec.height = cfg.dataset.height;
        spec.width = cfg.dataset.width;
        spec.seed = derive_seed(cfg.seed, "dataset");
        set = generate_dataset(spec);
    } else {
        set = ingest_image_folder(cfg.dataset.source, cfg.dataset.height, cfg.dataset.width);
    }
    save_dataset(paths.dataset_dir(), set);
    write_resolved_config(paths.dataset_dir(), cfg);
    std::printf("dataset: %zu images, %d classes, %dx%d -> %s\n", set.images.size(), set.classes,
                set.height, set.width, paths.dataset_dir().c_str());
    return 0;
}

int cmd_tokenizer(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set = load_dataset_checked(paths);
    Codebook cb = fit_codebook(set, cfg.tokenizer.codebook_size, cfg.tokenizer.patch_h,
                               cfg.tokenizer.patch_w, derive_seed(cfg.seed, "tokenizer"),
                               cfg.tokenizer.kmeans_iters);
    std::filesystem::create_directories(paths.codebook_file().parent_path());
    save_container(paths.codebook_file(), codebook_to_container(cb));
    write_resolved_config(paths.codebook_file().parent_path(), cfg);
    std::printf("tokenizer: %d codewords of dim %d -> %s\n", cb.k, cb.dim(),
                paths.codebook_file().c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set = load_dataset_checked(paths);
    Codebook cb = load_codebook_checked(paths);
    std::filesystem::create_directories(paths.generator_file().parent_path());
    std::ofstream log(paths.generator_file().parent_path() / "log.jsonl");
    int every = std::max(1, cfg.generator.steps / 20);
    GeneratorParams gen = train_generator(set, cb, cfg.generator, cfg.seed,
                                          jsonl_logger(log, stdout_logger("train", every)));
    save_container(paths.generator_file(), generator_to_container(gen));
    write_resolved_config(paths.generator_file().parent_path(), cfg);
    std::printf("train: digest %s -> %s\n", params_digest(gen).c_str(),
                paths.generator_file().c_str());
    return 0;
}

int cmd_finetune(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set = load_dataset_checked(paths);
    Codebook cb = load_codebook_checked(paths);
    GeneratorParams gen = load_generator_checked(paths, cfg);
    std::filesystem::create_directories(paths.adapter_file().parent_path());
    std::ofstream log(paths.adapter_file().parent_path() / "log.jsonl");
    AdapterParams a = finetune(gen, set, cb, cfg.adapter, cfg.seed,
                               jsonl_logger(log, stdout_logger("finetune", 50)));
    save_container(paths.adapter_file(), adapter_to_container(a));
    write_resolved_config(paths.adapter_file().parent_path(), cfg);
    std::printf("finetune: adapter for backbone %s -> %s\n", a.backbone_digest.c_str(),
                paths.adapter_file().c_str());
    return 0;
}

int cmd_sample(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    Codebook cb = load_codebook_checked(paths);
    GeneratorParams gen = load_generator_checked(paths, cfg);
    AdapterParams adapter;
    const AdapterParams* adapter_ptr = nullptr;
    if (cfg.sampling.guidance.mode == GuidanceMode::self) {
        adapter = load_adapter_checked(paths, gen);
        adapter_ptr = &adapter;
    }
    auto [rows, cols] = grid_shape(cfg);
    std::filesystem::create_directories(paths.sample_dir());

    std::vector<int> classes = classes_to_sample(cfg);
    std::vector<Image> tiles;
    std::ostringstream trace_out;
    int last_nfe = 0;
    for (int c : classes) {
        for (int j = 0; j < cfg.sampling.per_class; ++j) {
            GuidanceConfig g = cfg.sampling.guidance;
            g.seed = derive_seed(cfg.seed, "sample", static_cast<uint64_t>(c),
                                 static_cast<uint64_t>(j));
            auto [grid, trace] = generate(c, gen, adapter_ptr, g, rows, cols);
            char name[64];
            std::snprintf(name, sizeof name, "tokens_c%02d_%03d.txt", c, j);
            write_token_file(paths.sample_dir() / name, grid);
            tiles.push_back(detokenize(grid, cb));
            last_nfe = trace.total_nfe;

            json steps = json::array();
            for (const auto& s : trace.steps)
                steps.push_back({{"t", s.t},
                                 {"masked_after", s.n_masked_after},
                                 {"fixed", static_cast<int>(s.newly_fixed.size())},
                                 {"mean_confidence", s.mean_confidence},
                                 {"nfe", s.nfe_after}});
            json rec{{"class", c},
                     {"index", j},
                     {"mode", mode_name(g.mode)},
                     {"scale", g.scale},
                     {"temperature", g.temperature},
                     {"steps", g.steps},
                     {"nfe", trace.total_nfe},
                     {"step_records", steps}};
            if (!trace.nfe_note.empty()) rec["nfe_note"] = trace.nfe_note;
            trace_out << rec.dump() << "\n";
        }
    }
    atomic_write_text(paths.sample_dir() / "trace.jsonl", trace_out.str());
    Image grid_img = tile_images(tiles, static_cast<int>(classes.size()), cfg.sampling.per_class);
    write_png(paths.sample_dir() / "grid.png", grid_img);
    write_resolved_config(paths.sample_dir(), cfg);
    std::printf("sample: %zu samples (mode %s, NFE %d each) -> %s\n", tiles.size(),
                mode_name(cfg.sampling.guidance.mode), last_nfe, paths.sample_dir().c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set = load_dataset_checked(paths);
    Codebook cb = load_codebook_checked(paths);
    GeneratorParams gen = load_generator_checked(paths, cfg);
    AdapterParams adapter;
    const AdapterParams* adapter_ptr = nullptr;
    if (cfg.sampling.guidance.mode == GuidanceMode::self) {
        adapter = load_adapter_checked(paths, gen);
        adapter_ptr = &adapter;
    }
    FeatureNet net = ensure_feature_net(paths, cfg, set);

    std::vector<Image> real = real_eval_images(set, cfg.eval.n_real, cfg.seed);
    Tensor real_feats = extract_features(net, real);
    GenBatch batch = generate_batch(cfg, gen, adapter_ptr, cfg.sampling.guidance, cb,
                                    cfg.eval.n_gen, cfg.seed, "eval-gen");
    Tensor gen_feats = extract_features(net, batch.images);
    Tensor gen_probs = class_probs(net, batch.images);

    MetricsReport report;
    report.desk_fid = frechet_distance(real_feats, gen_feats);
    report.desk_is = inception_score_analog(gen_probs);
    auto [prec, rec] = precision_recall(real_feats, gen_feats, cfg.eval.knn_k);
    report.precision = prec;
    report.recall = rec;
    report.n_real = static_cast<int>(real.size());
    report.n_gen = static_cast<int>(batch.images.size());
    report.knn_k = cfg.eval.knn_k;
    report.config_digest = hex64(fnv1a64(config_to_text(cfg)));
    report.note = "desk-scale metrics in a private feature space; comparable only across runs of "
                  "this pipeline, never to published numbers. generator=" + params_digest(gen) +
                  (adapter_ptr ? " adapter=" + adapter.backbone_digest : std::string()) +
                  " feature_net=" + feature_net_digest(net);

    std::filesystem::create_directories(paths.eval_dir());
    atomic_write_text(paths.eval_dir() / "report.json", report_to_json(report));
    write_resolved_config(paths.eval_dir(), cfg);
    std::printf("eval: fid %.4f  is %.4f  precision %.3f  recall %.3f  (nfe %d/sample) -> %s\n",
                report.desk_fid, report.desk_is, report.precision, report.recall,
                batch.nfe_per_sample, (paths.eval_dir() / "report.json").c_str());
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    RunPaths paths{cfg.out_dir()};
    LabeledImageSet set = load_dataset_checked(paths);
    Codebook cb = load_codebook_checked(paths);
    GeneratorParams gen = load_generator_checked(paths, cfg);
    bool needs_adapter = std::any_of(cfg.sweep.modes.begin(), cfg.sweep.modes.end(),
                                     [](const std::string& m) { return m == "self"; });
    AdapterParams adapter;
    if (needs_adapter) adapter = load_adapter_checked(paths, gen);
    FeatureNet net = ensure_feature_net(paths, cfg, set);

    std::vector<Image> real = real_eval_images(set, cfg.eval.n_real, cfg.seed);
    Tensor real_feats = extract_features(net, real);

    std::filesystem::create_directories(paths.sweep_dir());
    write_resolved_config(paths.sweep_dir(), cfg);
    std::vector<SweepRow> rows = read_sweep_table(paths.sweep_table());
    int total = cfg.sweep.per_class * cfg.generator.classes;
    int done = 0, skipped = 0;

    for (const auto& mode_str : cfg.sweep.modes) {
        GuidanceMode mode = mode_from_name(mode_str);
        const AdapterParams* adapter_ptr = (mode == GuidanceMode::self) ? &adapter : nullptr;
        for (double scale : cfg.sweep.scales) {
            for (double tau : cfg.sweep.temperatures) {
                for (int steps : cfg.sweep.steps) {
                    for (uint64_t seed : cfg.sweep.seeds) {
                        if (sweep_point_done(rows, mode_str, scale, tau, steps, seed)) {
                            ++skipped;
                            continue;
                        }
                        auto t0 = clock_t_::now();
                        GuidanceConfig g = cfg.sampling.guidance;
                        g.mode = mode;
                        g.scale = scale;
                        g.temperature = tau;
                        g.steps = steps;
                        GenBatch batch =
                            generate_batch(cfg, gen, adapter_ptr, g, cb, total, seed, "sweep-gen");
                        Tensor gen_feats = extract_features(net, batch.images);
                        Tensor gen_probs = class_probs(net, batch.images);

                        SweepRow row;
                        row.mode = mode_str;
                        row.scale = scale;
                        row.tau = tau;
                        row.steps = steps;
                        row.fid = frechet_distance(real_feats, gen_feats);
                        row.is_score = inception_score_analog(gen_probs);
                        std::tie(row.precision, row.recall) =
                            precision_recall(real_feats, gen_feats, cfg.eval.knn_k);
                        row.nfe = batch.nfe_per_sample;
                        row.wall_s = seconds_since(t0);
                        row.seed = seed;
                        append_sweep_row(paths.sweep_table(), row);
                        rows.push_back(row);
                        ++done;
                        std::printf(
                            "sweep %s s=%g tau=%g T=%d seed=%llu: fid %.4f is %.4f (%.1fs)\n",
                            mode_str.c_str(), scale, tau, steps,
                            static_cast<unsigned long long>(seed), row.fid, row.is_score,
                            row.wall_s);
                    }
                }
            }
        }
    }
    write_curve_files(paths.sweep_dir(), rows);
    std::printf("sweep: %d new rows, %d already present -> %s\n", done, skipped,
                paths.sweep_table().c_str());
    return 0;
}

std::vector<SweepRow> read_sweep_table(const std::filesystem::path& path) {
    std::vector<SweepRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (line.empty()) continue;
        std::istringstream ss(line);
        SweepRow r;
        std::string field;
        auto next = [&]() {
            if (!std::getline(ss, field, '\t'))
                throw IoError("torn row in sweep table " + path.string());
            return field;
        };
        r.mode = next();
        r.scale = std::stod(next());
        r.tau = std::stod(next());
        r.steps = std::stoi(next());
        r.fid = std::stod(next());
        r.is_score = std::stod(next());
        r.precision = std::stod(next());
        r.recall = std::stod(next());
        r.nfe = std::stoi(next());
        r.wall_s = std::stod(next());
        r.seed = std::stoull(next());
        rows.push_back(std::move(r));
    }
    return rows;
}

void append_sweep_row(const std::filesystem::path& path, const SweepRow& row) {
    std::vector<SweepRow> rows = read_sweep_table(path);
    if (sweep_point_done(rows, row.mode, row.scale, row.tau, row.steps, row.seed)) return;
    std::ostringstream os;
    os << sweep_header();
    for (const auto& r : rows) os << sweep_row_line(r);
    os << sweep_row_line(row);
    atomic_write_text(path, os.str());
}

bool sweep_point_done(const std::vector<SweepRow>& rows, const std::string& mode, double scale,
                      double tau, int steps, uint64_t seed) {
    return std::any_of(rows.begin(), rows.end(), [&](const SweepRow& r) {
        return r.mode == mode && r.scale == scale && r.tau == tau && r.steps == steps &&
               r.seed == seed;
    });
}

void write_token_file(const std::filesystem::path& path, const TokenGrid& grid) {
    std::ostringstream os;
    os << grid.rows << ' ' << grid.cols << ' ' << grid.k << '\n';
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            if (c > 0) os << ' ';
            os << grid.tokens[static_cast<size_t>(r) * grid.cols + c];
        }
        os << '\n';
    }
    atomic_write_text(path, os.str());
}

TokenGrid read_token_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open token file " + path.string());
    TokenGrid g;
    in >> g.rows >> g.cols >> g.k;
    if (!in || g.rows < 1 || g.cols < 1 || g.k < 1)
        throw IoError("malformed token file " + path.string());
    g.tokens.resize(static_cast<size_t>(g.rows) * g.cols);
    for (auto& t : g.tokens)
        if (!(in >> t)) throw IoError("malformed token file " + path.string());
    return g;
}

} // namespace maskgen
