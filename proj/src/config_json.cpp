#include "maskgen/config_json.hpp"

#include "maskgen/error.hpp"

#include <algorithm>

namespace maskgen {

using nlohmann::json;

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& item : j.items()) {
        bool ok = std::any_of(allowed.begin(), allowed.end(),
                              [&](const char* k) { return item.key() == k; });
        if (!ok) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
}

json generator_config_to_json(const GeneratorConfig& c) {
    return json{{"layers", c.layers},
                {"dim", c.dim},
                {"heads", c.heads},
                {"vocab_k", c.vocab_k},
                {"n_tokens", c.n_tokens},
                {"classes", c.classes},
                {"dropout", c.dropout},
                {"cond_dropout_prob", c.cond_dropout_prob},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"steps", c.steps},
                {"batch", c.batch},
                {"warmup", c.warmup},
                {"ema_decay", c.ema_decay}};
}

GeneratorConfig generator_config_from_json(const json& j) {
    expect_keys(j, "generator config",
                {"layers", "dim", "heads", "vocab_k", "n_tokens", "classes", "dropout",
                 "cond_dropout_prob", "lr", "weight_decay", "steps", "batch", "warmup",
                 "ema_decay"});
    GeneratorConfig c;
    c.layers = j.at("layers").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab_k = j.at("vocab_k").get<int>();
    c.n_tokens = j.at("n_tokens").get<int>();
    c.classes = j.at("classes").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.cond_dropout_prob = j.at("cond_dropout_prob").get<double>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.steps = j.at("steps").get<int>();
    c.batch = j.at("batch").get<int>();
    c.warmup = j.at("warmup").get<int>();
    c.ema_decay = j.at("ema_decay").get<double>();
    c.validate();
    return c;
}

json adapter_config_to_json(const AdapterConfig& c) {
    return json{{"lambda", c.lambda}, {"error_rate", c.error_rate}, {"lr", c.lr},
                {"epochs", c.epochs}, {"batch", c.batch},           {"warmup", c.warmup},
                {"ema_decay", c.ema_decay}};
}

AdapterConfig adapter_config_from_json(const json& j) {
    expect_keys(j, "adapter config",
                {"lambda", "error_rate", "lr", "epochs", "batch", "warmup", "ema_decay"});
    AdapterConfig c;
    c.lambda = j.at("lambda").get<double>();
    c.error_rate = j.at("error_rate").get<double>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch = j.at("batch").get<int>();
    c.warmup = j.at("warmup").get<int>();
    c.ema_decay = j.at("ema_decay").get<double>();
    c.validate();
    return c;
}

} // namespace maskgen
