#pragma once

#include <vector>

#include "piseg/costvol.hpp"
#include "piseg/encoders.hpp"
#include "piseg/spm.hpp"

namespace piseg {

/// Everything that fixes the learnable pipeline's shapes and behavior.
struct ModelConfig {
  int embed_dim = 64;
  AggregatorConfig aggregator;
  int decoder_stages = 2;
  int reduction_ratio = 2;
  double sigma_t = 0.02;
  double cosine_eps = kCosineEps;
  bool text_spm = true;
  bool image_spm = true;
  /// Keep the Image-SPM output projection at zero (identity) and never update it.
  bool freeze_image_spm = false;
  NoiseSpec noise;

  void validate() const;
};

struct ModelParams {
  SpmParams spm;
  CostEmbedParams embed;
  std::vector<AggregationBlockParams> blocks;
  DecoderParams decoder;

  /// Every tensor, in checkpoint order.
  std::vector<NamedTensor> tensors();
  /// Tensors the optimizer updates under `config`.
  std::vector<NamedTensor> trainable(const ModelConfig& config);
};

ModelParams init_model(const ModelConfig& config, Rng& rng);
ModelParams zeros_like(const ModelParams& params);

/// Fixed stochastic draws for one forward pass.
struct NoiseDraw {
  Mat text;    // 1 x C
  Mat visual;  // P x C
};

NoiseDraw draw_noise(const ModelConfig& config, Eigen::Index positions, Rng& rng);

struct ForwardCache {
  bool perturbed_text = false;
  bool perturbed_visual = false;
  Mat text_hat;
  Mat visual;
  NoiseDraw noise;
  ImageSpmCache image_spm;
  CostCache cost_cache;
  CostVolume cost;
  CostFeatureVolume embedded;
  AggregationCache aggregation;
  DecoderCache decoder;
};

/// Perturbed embeddings (identity in eval mode or when a module is disabled).
struct PerturbedEmbeddings {
  Mat text_hat;
  Mat visual_hat;
};

PerturbedEmbeddings perturb(const ModelConfig& config, const ModelParams& params, const Mat& text,
                            const Mat& visual, SpmMode mode, const NoiseDraw* noise,
                            ImageSpmCache* image_cache = nullptr);

/// Raw cost volume after the SPM stage. `noise` is required in train mode.
CostVolume raw_cost(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
                    const VisualFeatureMap& visual, SpmMode mode, const NoiseDraw* noise);

/// Full forward: SPMs -> cost -> embed -> aggregate -> decode.
Logits forward(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
               const VisualFeatureMap& visual, GridSize target, SpmMode mode, const NoiseDraw* noise,
               ForwardCache* cache = nullptr);

/// Accumulates dL/dparams into `grads` given dL/dlogits.
void backward(const ModelConfig& config, const ModelParams& params, const ForwardCache& cache,
              const Mat& grad_logits, ModelParams& grads);

}  // namespace piseg
