#include "ftrack/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack {

Json ExperimentConfig::to_json() const {
  return Json{{"model", model.to_json()}, {"train", train.to_json()}, {"baseline", baseline.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") c.model = ModelConfig::from_json(v);
    else if (key == "train") c.train = TrainConfig::from_json(v);
    else if (key == "baseline") c.baseline = BaselineRules::from_json(v);
    else throw ConfigError(fmt::format("unknown config section '{}'", key));
  }
  c.model.validate();
  c.train.validate();
  return c;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void apply_override(Json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form section.key=value", assignment));
  }
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size() || path.find('.', dot + 1) != std::string::npos) {
    throw ConfigError(fmt::format("override key '{}' must be section.key", path));
  }
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (!config.is_object()) config = Json::object();
  Json& section = config[path.substr(0, dot)];
  if (section.is_null()) section = Json::object();
  if (!section.is_object()) throw ConfigError(fmt::format("config section '{}' is not an object", path.substr(0, dot)));
  section[path.substr(dot + 1)] = std::move(value);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides) {
  Json j = Json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path->string()));
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError(fmt::format("config file '{}' is not valid JSON: {}", path->string(), e.what()));
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return ExperimentConfig::from_json(j);
}

}  // namespace ftrack
