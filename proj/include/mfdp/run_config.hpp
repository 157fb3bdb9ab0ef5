#pragma once

// JSON run configuration: model, train, loss and paths sections. Missing keys
// keep their defaults; unknown keys are errors.

#include <string>
#include <vector>

#include <json.hpp>

#include "mfdp/metrics.hpp"
#include "mfdp/model.hpp"
#include "mfdp/trainer.hpp"

namespace mfdp {

struct Paths {
  std::string train_dir;
  std::string val_dir;
  std::string out_dir = "runs/default";
  std::string init_checkpoint;  // resume from here when set
  bool operator==(const Paths&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  Paths paths;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const Paths& p);
nlohmann::json to_json(const RunConfig& c);

/// A "preset" key, when present, is applied before the other keys.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base = {});
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
/// Applies "section.key=value"; value is parsed as JSON, falling back to a
/// plain string.
void apply_override(RunConfig& c, const std::string& assignment);
std::string dump(const RunConfig& c);

}  // namespace mfdp
