#pragma once

#include <string>
#include <vector>

#include "piseg/common.hpp"
#include "piseg/encoders.hpp"
#include "piseg/rng.hpp"

namespace piseg {

/// Name and storage of one learnable tensor. Used by the optimizer and the
/// checkpoint writer, which both walk parameters in a fixed order.
struct NamedTensor {
  std::string name;
  Mat* tensor = nullptr;
};

enum class NoiseFamily { kGaussian, kLaplace, kUniform, kStudentT };

std::string to_string(NoiseFamily family);
NoiseFamily parse_noise_family(const std::string& text);

/// Stochastic source of the perturbation modules. With `standardized` every
/// family has mean 0 and variance 1; otherwise the canonical unit-scale form is
/// drawn (N(0,1), Laplace(0,1), U(-1,1), raw Student-t).
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::kGaussian;
  double df = 10.0;
  bool standardized = true;

  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

/// i.i.d. draws of shape rows x cols from `rng`.
Mat sample_noise(const NoiseSpec& spec, Eigen::Index rows, Eigen::Index cols, Rng& rng);

enum class SpmMode { kTrain, kEval };

struct TextSpmParams {
  Mat mu;     // 1 x C
  Mat sigma;  // 1 x C
  double init_scale = 0.0;

  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

/// Text-guided cross-attention predicting per-position (mu, sigma_raw).
/// Projections compress C to hidden = floor(C / r).
struct ImageSpmParams {
  Mat wq, bq;  // C x h, 1 x h
  Mat wk, bk;
  Mat wv, bv;
  Mat wo, bo;  // h x 2C, 1 x 2C
  int reduction_ratio = 1;

  int hidden_dim() const { return static_cast<int>(wq.cols()); }
  int embed_dim() const { return static_cast<int>(wq.rows()); }
  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

struct SpmParams {
  TextSpmParams text;
  ImageSpmParams image;
};

SpmParams init_spm_params(int embed_dim, double sigma_t, int reduction_ratio, Rng& rng);

/// Zeroed tensors with the shapes of `like`, for gradient accumulation.
TextSpmParams zeros_like(const TextSpmParams& like);
ImageSpmParams zeros_like(const ImageSpmParams& like);

// ---- Text-SPM -------------------------------------------------------------

/// T_hat = T + |sigma| * z + mu, with one z (1 x C) shared by all class rows.
Mat text_spm_apply(const Mat& text, const TextSpmParams& params, const Mat& z);

/// Accumulates parameter gradients given dL/dT_hat.
void text_spm_backward(const Mat& grad_text_hat, const TextSpmParams& params, const Mat& z,
                       TextSpmParams& grads);

TextEmbedding text_spm_forward(const TextEmbedding& text, const TextSpmParams& params,
                               const NoiseSpec& spec, SpmMode mode, Rng& rng);

// ---- Image-SPM ------------------------------------------------------------

struct ImageSpmCache {
  Mat cue;     // 1 x C, mean of T_hat rows
  Mat query;   // P x h
  Mat key;     // 1 x h
  Mat value;   // 1 x h
  Eigen::VectorXd gate;  // P, sigmoid(q.k / sqrt(h))
  Mat hidden;  // P x h
  Mat out;     // P x 2C, (mu | sigma_raw)
  Mat z;       // P x C
  Eigen::Index num_text_rows = 0;
};

/// V_hat = V + |sigma_raw| * z + mu with (mu, sigma_raw) predicted per position.
Mat image_spm_apply(const Mat& visual, const Mat& text_hat, const ImageSpmParams& params,
                    const Mat& z, ImageSpmCache* cache = nullptr);

/// Accumulates parameter gradients given dL/dV_hat and returns dL/dT_hat
/// (through the semantic cue).
Mat image_spm_backward(const Mat& grad_visual_hat, const Mat& visual, const ImageSpmParams& params,
                       const ImageSpmCache& cache, ImageSpmParams& grads);

VisualFeatureMap image_spm_forward(const VisualFeatureMap& visual, const TextEmbedding& text_hat,
                                   const ImageSpmParams& params, const NoiseSpec& spec,
                                   SpmMode mode, Rng& rng);

}  // namespace piseg
