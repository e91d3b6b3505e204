#pragma once

#include <string>
#include <vector>

#include "piseg/common.hpp"
#include "piseg/encoders.hpp"
#include "piseg/image.hpp"
#include "piseg/rng.hpp"
#include "piseg/spm.hpp"

namespace piseg {

inline constexpr double kCosineEps = 1e-8;

/// Raw pixel-text cosine costs, P x N with P = grid.area().
struct CostVolume {
  Mat tensor;
  GridSize grid;

  int num_classes() const { return static_cast<int>(tensor.cols()); }
};

/// Embedded costs: one row per (position, class) token, row = p * N + n.
struct CostFeatureVolume {
  Mat tensor;
  GridSize grid;
  int num_classes = 0;

  int feature_dim() const { return static_cast<int>(tensor.cols()); }
};

struct AggregatorConfig {
  int num_blocks = 2;
  int feature_dim = 64;
  int window = 5;

  void validate() const;
};

/// Per-pixel class scores, (H * W) x N.
struct Logits {
  Mat tensor;
  GridSize size;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(tensor.cols()); }
};

// ---- cost construction -----------------------------------------------------

struct CostCache {
  Mat visual_unit;  // rows of V_hat / max(|V_hat|, eps)
  Mat text_unit;
  Eigen::VectorXd visual_norm;
  Eigen::VectorXd text_norm;
  double eps = kCosineEps;
};

Mat cost_volume_apply(const Mat& visual_hat, const Mat& text_hat, double eps, CostCache* cache = nullptr);

/// Gradients of the cost volume w.r.t. V_hat and T_hat.
void cost_volume_backward(const Mat& grad_cost, const CostCache& cache, Mat* grad_visual_hat,
                          Mat* grad_text_hat);

CostVolume build_cost_volume(const VisualFeatureMap& visual_hat, const TextEmbedding& text_hat,
                             double eps = kCosineEps);

// ---- cost embedding --------------------------------------------------------

struct CostEmbedParams {
  Mat weight;  // 1 x D
  Mat bias;    // 1 x D

  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

CostFeatureVolume embed_cost(const CostVolume& cost, const CostEmbedParams& params);
void embed_cost_backward(const Mat& grad_features, const CostVolume& cost, const CostEmbedParams& params,
                         CostEmbedParams& grads, Mat* grad_cost);

// ---- aggregation -----------------------------------------------------------

struct AttentionParams {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;  // D x D and 1 x D

  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

/// One residual spatial mixer (local window attention per class slot, with a
/// relative position bias) followed by one residual class mixer (full
/// attention across class slots per position, no positional encoding).
struct AggregationBlockParams {
  AttentionParams spatial;
  Mat relative_bias;  // 1 x (window * window)
  AttentionParams classwise;

  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

struct AttentionCache {
  Mat input;
  Mat query, key, value;
  Mat weights;  // spatial: T x window^2 (0 outside the grid); class: T x N
  Mat mixed;
};

struct AggregationCache {
  std::vector<AttentionCache> spatial;
  std::vector<AttentionCache> classwise;
};

std::vector<AggregationBlockParams> init_aggregator(const AggregatorConfig& config, Rng& rng,
                                                    bool zero_residual = false);

CostFeatureVolume aggregate(const CostFeatureVolume& features, const AggregatorConfig& config,
                            const std::vector<AggregationBlockParams>& blocks,
                            AggregationCache* cache = nullptr);

/// Returns dL/d(input features); accumulates block gradients.
Mat aggregate_backward(const Mat& grad_output, const CostFeatureVolume& input_shape,
                       const AggregatorConfig& config, const std::vector<AggregationBlockParams>& blocks,
                       const AggregationCache& cache, std::vector<AggregationBlockParams>& grads);

// ---- decoding --------------------------------------------------------------

struct ConvParams {
  Mat weight;  // D x D
  Mat bias;    // 1 x D
};

/// Stage s upsamples 2x then applies a pointwise convolution with SiLU. A
/// linear head maps D -> 1 logit per class after the final resize.
struct DecoderParams {
  std::vector<ConvParams> stages;
  Mat head_weight;  // D x 1
  Mat head_bias;    // 1 x 1

  void collect(std::vector<NamedTensor>& out, const std::string& prefix);
};

struct DecoderCache {
  std::vector<GridSize> grids;       // grid before each used stage, then the last grid
  std::vector<Mat> upsampled;        // stage inputs after upsampling
  std::vector<Mat> preactivation;
  Mat resized;                       // final features at target size
  GridSize target;
  int num_classes = 0;
};

DecoderParams init_decoder(int feature_dim, int num_stages, Rng& rng);

Logits decode(const CostFeatureVolume& features, GridSize target, const DecoderParams& params,
              DecoderCache* cache = nullptr);

Mat decode_backward(const Mat& grad_logits, const DecoderParams& params, const DecoderCache& cache,
                    DecoderParams& grads);

/// Bilinear resize of token rows (position-major, num_classes tokens per
/// position) with half-pixel centers.
Mat resize_tokens(const Mat& tokens, GridSize from, GridSize to, int num_classes);
Mat resize_tokens_backward(const Mat& grad_out, GridSize from, GridSize to, int num_classes);

// ---- readout ---------------------------------------------------------------

/// Per-pixel argmax; ties go to the lowest class index.
SegmentationMap predict(const Logits& logits);

}  // namespace piseg
