#pragma once

#include "geoprompt/config.hpp"

#include <json.hpp>

namespace geoprompt {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const DatasetSpec& spec);
Json to_json(const GradCheckConfig& cfg);
Json to_json(const RunConfig& cfg);

/// Parsers start from defaults, overwrite the fields present and reject
/// unknown keys. Errors are ConfigError with a JSON pointer rooted at `at`.
ModelConfig model_config_from_json(const Json& j, const std::string& at = "/model");
TrainConfig train_config_from_json(const Json& j, const std::string& at = "/train");
DatasetSpec dataset_spec_from_json(const Json& j, const std::string& at = "/data");
GradCheckConfig gradcheck_config_from_json(const Json& j, const std::string& at = "/gradcheck");
/// Parses and validates a whole run config.
RunConfig run_config_from_json(const Json& j);

/// Reads a JSON file. Throws MissingFile, or ConfigError for malformed text.
Json read_json_file(const std::string& path);

}  // namespace geoprompt
