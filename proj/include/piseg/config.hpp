#pragma once

#include <map>
#include <string>

#include "json.hpp"

#include "piseg/model.hpp"
#include "piseg/train.hpp"

namespace piseg {

struct EncoderConfig {
  int patch_stride = 4;
  std::string seed_namespace = "piseg-synthetic";
  /// Weight of the prompt vector in lexicon-bound synthetic patch features.
  double alignment = 0.5;
  std::string prompt_template = "a photo of {class}";

  void validate() const;
};

/// Everything a training run needs. The embedding width is model.embed_dim.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  EncoderConfig encoder;
  std::string train_manifest;
  std::string out_dir = "runs/default";

  void validate() const;
  nlohmann::json to_json() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);

/// Merges a partial config into `config`. Every key must already exist in
/// the full config tree and keep its JSON type (numbers interchange).
void apply_overrides(RunConfig& config, const nlohmann::json& patch);

/// Builds a patch from PISEG_* variables: the remainder of the name is
/// lower-cased and split on "__" into a key path, so PISEG_TRAIN__BASE_LR=1e-3
/// sets train.base_lr. Values parse as JSON, falling back to a plain string.
nlohmann::json environment_overrides(const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

/// Desk-scale settings sized for a single CPU core.
RunConfig desk_preset();
RunConfig named_preset(const std::string& name);

}  // namespace piseg
