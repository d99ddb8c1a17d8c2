#pragma once

#include "maskgen/adapter.hpp"
#include "maskgen/generator.hpp"

#include <json.hpp>

#include <initializer_list>
#include <string>

namespace maskgen {

// JSON (de)serialization for the trainable-module configs, shared between
// checkpoint metadata and run-config parsing. Parsers are strict: missing
// and unknown keys both raise ConfigError.

void expect_keys(const nlohmann::json& j, const std::string& where,
                 std::initializer_list<const char*> allowed);

nlohmann::json generator_config_to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

nlohmann::json adapter_config_to_json(const AdapterConfig& c);
AdapterConfig adapter_config_from_json(const nlohmann::json& j);

} // namespace maskgen
