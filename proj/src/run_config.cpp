#include "maskgen/run_config.hpp"

#include "maskgen/config_json.hpp"
#include "maskgen/error.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace maskgen {

using nlohmann::json;

void DatasetSection::validate() const {
    if (kind != "shapes" && kind != "folder")
        throw ConfigError("dataset.kind must be \"shapes\" or \"folder\", got \"" + kind + "\"");
    if (kind == "folder" && source.empty())
        throw ConfigError("dataset.source is required when dataset.kind is \"folder\"");
    if (per_class < 1) throw ConfigError("dataset.per_class must be positive");
    if (classes < 1) throw ConfigError("dataset.classes must be positive");
    if (height < 4 || width < 4) throw ConfigError("dataset.height/width must be at least 4");
}

void TokenizerSection::validate() const {
    if (codebook_size < 2) throw ConfigError("tokenizer.codebook_size must be at least 2");
    if (patch_h < 1 || patch_w < 1) throw ConfigError("tokenizer.patch_h/patch_w must be positive");
    if (kmeans_iters < 1) throw ConfigError("tokenizer.kmeans_iters must be positive");
}

void SamplingSection::validate() const {
    guidance.validate();
    if (per_class < 1) throw ConfigError("sampling.per_class must be positive");
    if (class_id < -1) throw ConfigError("sampling.class_id must be -1 (all) or a class index");
}

void EvalSection::validate() const {
    if (n_real < 2 || n_gen < 2) throw ConfigError("eval.n_real and eval.n_gen must be at least 2");
    if (knn_k < 1) throw ConfigError("eval.knn_k must be positive");
    feature_net.validate();
}

void SweepSection::validate() const {
    if (modes.empty() || scales.empty() || temperatures.empty() || steps.empty() || seeds.empty())
        throw ConfigError("sweep: every grid axis needs at least one value");
    for (const auto& m : modes) mode_from_name(m);
    for (double s : scales)
        if (s < -1.0) throw ConfigError("sweep.scales entries must be >= -1");
    for (double t : temperatures)
        if (t < 0.0) throw ConfigError("sweep.temperatures entries must be non-negative");
    for (int t : steps)
        if (t < 1) throw ConfigError("sweep.steps entries must be positive");
    if (per_class < 1) throw ConfigError("sweep.per_class must be positive");
}

void RunConfig::validate() const {
    if (out.empty()) throw ConfigError("out must not be empty");
    dataset.validate();
    tokenizer.validate();
    generator.validate();
    adapter.validate();
    sampling.validate();
    eval.validate();
    sweep.validate();
    if (dataset.height % tokenizer.patch_h != 0 || dataset.width % tokenizer.patch_w != 0)
        throw ConfigError("tokenizer patch size must divide the dataset image size");
    int rows = dataset.height / tokenizer.patch_h;
    int cols = dataset.width / tokenizer.patch_w;
    if (generator.n_tokens != rows * cols)
        throw ConfigError("generator.n_tokens (" + std::to_string(generator.n_tokens) +
                          ") must equal the token grid size " + std::to_string(rows * cols));
    if (generator.vocab_k != tokenizer.codebook_size)
        throw ConfigError("generator.vocab_k must equal tokenizer.codebook_size");
    if (generator.classes != dataset.classes)
        throw ConfigError("generator.classes must equal dataset.classes");
    if (sampling.class_id >= generator.classes)
        throw ConfigError("sampling.class_id out of range");
    if (sampling.guidance.steps > generator.n_tokens)
        throw ConfigError("sampling.steps must not exceed the token count");
    for (int t : sweep.steps)
        if (t > generator.n_tokens) throw ConfigError("sweep.steps entries must not exceed the token count");
}

namespace {

json dataset_to_json(const DatasetSection& d) {
    return json{{"kind", d.kind},       {"source", d.source}, {"per_class", d.per_class},
                {"classes", d.classes}, {"height", d.height}, {"width", d.width}};
}

DatasetSection dataset_from_json(const json& j) {
    expect_keys(j, "dataset", {"kind", "source", "per_class", "classes", "height", "width"});
    DatasetSection d;
    if (j.contains("kind")) d.kind = j.at("kind").get<std::string>();
    if (j.contains("source")) d.source = j.at("source").get<std::string>();
    if (j.contains("per_class")) d.per_class = j.at("per_class").get<int>();
    if (j.contains("classes")) d.classes = j.at("classes").get<int>();
    if (j.contains("height")) d.height = j.at("height").get<int>();
    if (j.contains("width")) d.width = j.at("width").get<int>();
    return d;
}

json tokenizer_to_json(const TokenizerSection& t) {
    return json{{"codebook_size", t.codebook_size},
                {"patch_h", t.patch_h},
                {"patch_w", t.patch_w},
                {"kmeans_iters", t.kmeans_iters}};
}

TokenizerSection tokenizer_from_json(const json& j) {
    expect_keys(j, "tokenizer", {"codebook_size", "patch_h", "patch_w", "kmeans_iters"});
    TokenizerSection t;
    if (j.contains("codebook_size")) t.codebook_size = j.at("codebook_size").get<int>();
    if (j.contains("patch_h")) t.patch_h = j.at("patch_h").get<int>();
    if (j.contains("patch_w")) t.patch_w = j.at("patch_w").get<int>();
    if (j.contains("kmeans_iters")) t.kmeans_iters = j.at("kmeans_iters").get<int>();
    return t;
}

json sampling_to_json(const SamplingSection& s) {
    return json{{"mode", mode_name(s.guidance.mode)},
                {"scale", s.guidance.scale},
                {"temperature", s.guidance.temperature},
                {"steps", s.guidance.steps},
                {"blur_sigma", s.guidance.blur_sigma},
                {"argmax_tokens", s.guidance.argmax_tokens},
                {"per_class", s.per_class},
                {"class_id", s.class_id}};
}

SamplingSection sampling_from_json(const json& j) {
    expect_keys(j, "sampling",
                {"mode", "scale", "temperature", "steps", "blur_sigma", "argmax_tokens",
                 "per_class", "class_id"});
    SamplingSection s;
    if (j.contains("mode")) s.guidance.mode = mode_from_name(j.at("mode").get<std::string>());
    if (j.contains("scale")) s.guidance.scale = j.at("scale").get<double>();
    if (j.contains("temperature")) s.guidance.temperature = j.at("temperature").get<double>();
    if (j.contains("steps")) s.guidance.steps = j.at("steps").get<int>();
    if (j.contains("blur_sigma")) s.guidance.blur_sigma = j.at("blur_sigma").get<double>();
    if (j.contains("argmax_tokens")) s.guidance.argmax_tokens = j.at("argmax_tokens").get<bool>();
    if (j.contains("per_class")) s.per_class = j.at("per_class").get<int>();
    if (j.contains("class_id")) s.class_id = j.at("class_id").get<int>();
    return s;
}

json feature_net_to_json(const FeatureNetConfig& f) {
    return json{{"epochs", f.epochs},
                {"batch", f.batch},
                {"lr", f.lr},
                {"warmup", f.warmup},
                {"holdout_frac", f.holdout_frac},
                {"accuracy_gate", f.accuracy_gate}};
}

FeatureNetConfig feature_net_from_json(const json& j) {
    expect_keys(j, "eval.feature_net",
                {"epochs", "batch", "lr", "warmup", "holdout_frac", "accuracy_gate"});
    FeatureNetConfig f;
    if (j.contains("epochs")) f.epochs = j.at("epochs").get<int>();
    if (j.contains("batch")) f.batch = j.at("batch").get<int>();
    if (j.contains("lr")) f.lr = j.at("lr").get<double>();
    if (j.contains("warmup")) f.warmup = j.at("warmup").get<int>();
    if (j.contains("holdout_frac")) f.holdout_frac = j.at("holdout_frac").get<double>();
    if (j.contains("accuracy_gate")) f.accuracy_gate = j.at("accuracy_gate").get<double>();
    return f;
}

json eval_to_json(const EvalSection& e) {
    return json{{"n_real", e.n_real},
                {"n_gen", e.n_gen},
                {"knn_k", e.knn_k},
                {"feature_net", feature_net_to_json(e.feature_net)}};
}

EvalSection eval_from_json(const json& j) {
    expect_keys(j, "eval", {"n_real", "n_gen", "knn_k", "feature_net"});
    EvalSection e;
    if (j.contains("n_real")) e.n_real = j.at("n_real").get<int>();
    if (j.contains("n_gen")) e.n_gen = j.at("n_gen").get<int>();
    if (j.contains("knn_k")) e.knn_k = j.at("knn_k").get<int>();
    if (j.contains("feature_net")) e.feature_net = feature_net_from_json(j.at("feature_net"));
    return e;
}

json sweep_to_json(const SweepSection& s) {
    return json{{"modes", s.modes},     {"scales", s.scales}, {"temperatures", s.temperatures},
                {"steps", s.steps},     {"seeds", s.seeds},   {"per_class", s.per_class}};
}

SweepSection sweep_from_json(const json& j) {
    expect_keys(j, "sweep", {"modes", "scales", "temperatures", "steps", "seeds", "per_class"});
    SweepSection s;
    if (j.contains("modes")) s.modes = j.at("modes").get<std::vector<std::string>>();
    if (j.contains("scales")) s.scales = j.at("scales").get<std::vector<double>>();
    if (j.contains("temperatures"))
        s.temperatures = j.at("temperatures").get<std::vector<double>>();
    if (j.contains("steps")) s.steps = j.at("steps").get<std::vector<int>>();
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("per_class")) s.per_class = j.at("per_class").get<int>();
    return s;
}

RunConfig config_from_json(const json& j) {
    expect_keys(j, "config",
                {"seed", "out", "dataset", "tokenizer", "generator", "adapter",
                 "backbone_digest", "sampling", "eval", "sweep"});
    RunConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
    if (j.contains("tokenizer")) c.tokenizer = tokenizer_from_json(j.at("tokenizer"));
    if (j.contains("generator")) {
        // Section defaults fill in whatever the document leaves out, then the
        // strict parser re-reads the merged object.
        json merged = generator_config_to_json(c.generator);
        expect_keys(j.at("generator"), "generator",
                    {"layers", "dim", "heads", "vocab_k", "n_tokens", "classes", "dropout",
                     "cond_dropout_prob", "lr", "weight_decay", "steps", "batch", "warmup",
                     "ema_decay"});
        merged.update(j.at("generator"));
        c.generator = generator_config_from_json(merged);
    }
    if (j.contains("adapter")) {
        json merged = adapter_config_to_json(c.adapter);
        expect_keys(j.at("adapter"), "adapter",
                    {"lambda", "error_rate", "lr", "epochs", "batch", "warmup", "ema_decay"});
        merged.update(j.at("adapter"));
        c.adapter = adapter_config_from_json(merged);
    }
    if (j.contains("backbone_digest")) c.backbone_digest = j.at("backbone_digest").get<std::string>();
    if (j.contains("sampling")) c.sampling = sampling_from_json(j.at("sampling"));
    if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"));
    if (j.contains("sweep")) c.sweep = sweep_from_json(j.at("sweep"));
    return c;
}

json config_to_json(const RunConfig& c) {
    return json{{"seed", c.seed},
                {"out", c.out},
                {"dataset", dataset_to_json(c.dataset)},
                {"tokenizer", tokenizer_to_json(c.tokenizer)},
                {"generator", generator_config_to_json(c.generator)},
                {"adapter", adapter_config_to_json(c.adapter)},
                {"backbone_digest", c.backbone_digest},
                {"sampling", sampling_to_json(c.sampling)},
                {"eval", eval_to_json(c.eval)},
                {"sweep", sweep_to_json(c.sweep)}};
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);
    return v;
}

void apply_override(json& doc, const std::string& setting) {
    auto eq = setting.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got \"" + setting + "\"");
    std::string path = setting.substr(0, eq);
    json value = parse_override_value(setting.substr(eq + 1));

    json* node = &doc;
    size_t begin = 0;
    while (true) {
        auto dot = path.find('.', begin);
        std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
        if (key.empty()) throw ConfigError("--set path \"" + path + "\" has an empty segment");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        if (!node->is_object())
            throw ConfigError("--set path \"" + path + "\" descends into a non-object value");
        begin = dot + 1;
    }
}

} // namespace

RunConfig config_from_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    RunConfig c = config_from_json(j);
    c.validate();
    return c;
}

std::string config_to_text(const RunConfig& c) {
    return config_to_json(c).dump(2) + "\n";
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                         const uint64_t* seed_flag, const std::string* out_flag) {
    json doc = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open config file " + config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        doc = json::parse(ss.str(), nullptr, false);
        if (doc.is_discarded()) throw ConfigError("config file " + config_path + " is not valid JSON");
    }
    for (const auto& setting : overrides) apply_override(doc, setting);
    if (seed_flag) doc["seed"] = *seed_flag;
    if (out_flag) doc["out"] = *out_flag;

    bool out_chosen = doc.contains("out");
    RunConfig c = config_from_json(doc);
    if (!out_chosen) {
        const char* env_root = std::getenv("MASKGEN_OUT");
        c.out = (env_root != nullptr ? std::string(env_root) : std::string("runs")) + "/default";
    }
    c.validate();
    return c;
}

} // namespace maskgen
