#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "piseg/config.hpp"
#include "piseg/data.hpp"
#include "piseg/eval.hpp"

namespace piseg {

/// Synthetic encoder for `config`; the manifest palette (if any) becomes the
/// color-to-prompt lexicon.
SyntheticEncoder make_encoder(const EncoderConfig& config, int embed_dim, const DatasetManifest* manifest);

/// Runs the frozen encoders over a manifest once.
TrainingData prepare_data(const DatasetManifest& manifest, const EncoderAdapter& encoder,
                          const std::string& prompt_template);

struct TrainingOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many completed steps (for interrupted-run tests).
  std::optional<std::int64_t> stop_after;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainingResult {
  std::int64_t steps = 0;
  double final_loss = 0.0;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  bool aborted = false;
};

/// Trains into config.out_dir: config.json (effective config), metrics.jsonl,
/// checkpoints/step_<k>.ckpt, final.ckpt. A non-finite loss writes abort.ckpt
/// with the last good weights and rethrows.
TrainingResult run_training(const RunConfig& config, const TrainingOptions& options = {});

/// Step-k checkpoint path inside a run directory.
std::filesystem::path step_checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step);

struct LoadedModel {
  RunConfig config;
  ModelParams params;
};

LoadedModel load_model(const std::filesystem::path& checkpoint_path);

/// Eval-mode predictions of a model on prepared data, accumulated into one
/// confusion matrix over data.text classes.
ConfusionMatrix confusion_on(const ModelConfig& config, const ModelParams& params, const TrainingData& data,
                             const std::function<void(size_t, const Logits&)>& on_logits = {});

struct EvalOptions {
  std::optional<DatasetSplit> split;  // overrides the manifest's split
  std::optional<std::filesystem::path> dump_logits_dir;
};

EvalReport evaluate_manifest(const LoadedModel& model, const DatasetManifest& manifest,
                             const EvalOptions& options = {});

/// Mean delta statistics of a trained model over a manifest.
std::optional<DeltaStats> diagnose_manifest(const LoadedModel& model, const DatasetManifest& manifest, int draws,
                                            std::uint64_t seed);

/// Raw logits: "PISEGLG1", u64 height, u64 width, u64 classes, then
/// height * width * classes little-endian f64 in (y, x, class) order.
void write_logits(const Logits& logits, const std::filesystem::path& path);
Logits read_logits(const std::filesystem::path& path);

}  // namespace piseg
