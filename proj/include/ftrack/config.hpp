#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ftrack/baseline.hpp"
#include "ftrack/model.hpp"
#include "ftrack/training.hpp"

namespace ftrack {

// Everything an experiment depends on. Serialized as
// {"model": {...}, "train": {...}, "baseline": {...}}; missing sections and
// keys keep their defaults, unknown ones are errors.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  BaselineRules baseline;

  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  // Content hash of the canonical JSON form.
  std::string hash() const;
};

// Applies one "section.key=value" override. The value is read as JSON when it
// parses, otherwise as a plain string ("train.stop_metric=validation_loss").
void apply_override(Json& config, std::string_view assignment);

// Reads `path` (if any), applies the overrides in order and validates.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {});

}  // namespace ftrack
