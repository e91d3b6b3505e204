#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "piseg/checkpoint.hpp"
#include "piseg/diagnostics.hpp"
#include "piseg/model.hpp"

namespace piseg {

struct TrainConfig {
  std::int64_t total_steps = 40000;
  int batch_size = 8;
  double base_lr = 2e-4;
  std::int64_t warmup_steps = 0;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;  // global norm; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t log_every = 10;
  std::int64_t diag_every = 100;  // 0 disables delta-correlation logging
  int diag_draws = 1;
  std::int64_t checkpoint_every = 0;

  void validate() const;
};

/// Linear warmup to base_lr, then half-cosine decay to 0 at total_steps.
/// Steps past total_steps clamp to the final value.
double lr_at(std::int64_t step, const TrainConfig& config);

struct CrossEntropy {
  double sum = 0.0;         // summed over counted pixels
  std::int64_t count = 0;   // non-ignored pixels
};

/// Summed per-pixel cross-entropy; writes d(sum)/dlogits into `grad` if given.
CrossEntropy cross_entropy_sum(const Logits& logits, const SegmentationMap& gt, Mat* grad,
                               std::uint8_t ignore_index = kIgnoreIndex);

/// Mean cross-entropy over non-ignored pixels (0 when everything is ignored).
/// `grad` receives d(mean)/dlogits.
double compute_loss(const Logits& logits, const SegmentationMap& gt, Mat* grad = nullptr,
                    std::uint8_t ignore_index = kIgnoreIndex);

struct AdamState {
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
  std::int64_t t = 0;
};

/// One decoupled-weight-decay Adam update of `params` (names must match `grads`).
void adamw_update(std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads, AdamState& state,
                  double lr, const TrainConfig& config);

/// Scales gradients to global L2 norm <= max_norm. Returns the norm before clipping.
double clip_global_norm(const std::vector<NamedTensor>& grads, double max_norm);

/// Frozen-encoder outputs for a training set, computed once.
struct TrainingData {
  TextEmbedding text;
  std::vector<VisualFeatureMap> features;
  std::vector<SegmentationMap> masks;
  int patch_stride = 1;

  size_t size() const { return features.size(); }
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::optional<DeltaStats> delta;

  nlohmann::json to_json() const;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

/// Sample indices of the batch at `step`: epochs are seed-determined
/// permutations of the training set, consumed in order.
std::vector<int> batch_indices(std::int64_t step, int batch_size, size_t dataset_size, std::uint64_t seed);

/// One optimization step on `batch`. Noise is drawn per sample from `rng`.
StepMetrics train_step(const std::vector<int>& batch, const TrainingData& data, ModelParams& params,
                       AdamState& opt, const ModelConfig& model_config, const TrainConfig& config,
                       std::int64_t step, Rng& rng);

/// Mean delta-correlation statistics over `batch` under the current weights.
std::optional<DeltaStats> batch_delta_stats(const std::vector<int>& batch, const TrainingData& data,
                                            const ModelParams& params, const ModelConfig& model_config,
                                            int draws, Rng& rng);

/// Owns parameters and optimizer state across steps. Randomness for step s is
/// derived from (seed, s), so a restored trainer continues bit-exactly.
class Trainer {
 public:
  Trainer(ModelConfig model_config, TrainConfig config, const TrainingData& data);

  StepMetrics step();
  std::int64_t completed_steps() const { return completed_; }
  bool done() const { return completed_ >= config_.total_steps; }

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const AdamState& optimizer() const { return opt_; }
  const ModelConfig& model_config() const { return model_config_; }
  const TrainConfig& config() const { return config_; }

  /// Snapshot embedding `run_config` (the effective configuration) as metadata.
  Checkpoint checkpoint(const nlohmann::json& run_config) const;
  void restore(const Checkpoint& checkpoint);

 private:
  ModelConfig model_config_;
  TrainConfig config_;
  const TrainingData& data_;
  ModelParams params_;
  AdamState opt_;
  std::int64_t completed_ = 0;
};

/// Writes parameters into a checkpoint / reads them back (shapes must match).
void store_params(Checkpoint& ck, ModelParams& params);
void load_params(const Checkpoint& ck, ModelParams& params);

}  // namespace piseg
