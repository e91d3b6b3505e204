#pragma once

#include <map>
#include <string>
#include <vector>

#include "piseg/common.hpp"
#include "piseg/image.hpp"

namespace piseg {

inline constexpr const char* kDefaultPromptTemplate = "a photo of {class}";

struct PromptSet {
  std::vector<std::string> class_names;
  std::string template_text;
  std::vector<std::string> prompts;
};

/// N x C class-prompt embeddings; row i belongs to class_names[i].
struct TextEmbedding {
  Mat matrix;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(matrix.rows()); }
  int embed_dim() const { return static_cast<int>(matrix.cols()); }
};

/// Dense visual features: one row per grid cell (row-major over H' x W').
struct VisualFeatureMap {
  Mat tensor;
  GridSize grid;
  GridSize source_size;

  int embed_dim() const { return static_cast<int>(tensor.cols()); }
};

/// Renders `template_text` once per class. The template must contain exactly
/// one "{class}" placeholder.
PromptSet apply_prompt_template(const std::vector<std::string>& class_names,
                                const std::string& template_text = kDefaultPromptTemplate);

/// Interface for a vision-language backbone. A real model plugs in here; the
/// library ships only the synthetic implementations below.
class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;
  virtual TextEmbedding encode_text(const PromptSet& prompts) const = 0;
  virtual VisualFeatureMap encode_image(const Image& image) const = 0;
  virtual int patch_stride() const = 0;
  virtual int embed_dim() const = 0;
};

/// Unit-norm Gaussian vector seeded by hash(namespace, key). Shared by both
/// synthetic encoders.
RowVec hashed_unit_vector(const std::string& key, int embed_dim, const std::string& seed_namespace);

TextEmbedding encode_text_synthetic(const PromptSet& prompts, int embed_dim,
                                    const std::string& seed_namespace);

/// Options for the synthetic image encoder. `lexicon` binds exact patch colors
/// to prompt strings; for a bound color the feature is
/// normalize(alignment * text_vector(prompt) + (1 - alignment) * color_vector).
/// Unbound colors (and alignment 0) produce the pure color-hash feature.
struct SyntheticImageOptions {
  int embed_dim = 64;
  int downsample = 4;
  std::string seed_namespace = "piseg-synthetic";
  std::map<Rgb8, std::string> lexicon;
  double alignment = 0.0;
};

VisualFeatureMap encode_image_synthetic(const Image& image, const SyntheticImageOptions& options);

/// Convenience overload with no lexicon.
VisualFeatureMap encode_image_synthetic(const Image& image, int embed_dim, int downsample,
                                        const std::string& seed_namespace);

class SyntheticEncoder final : public EncoderAdapter {
 public:
  explicit SyntheticEncoder(SyntheticImageOptions options) : options_(std::move(options)) {}

  TextEmbedding encode_text(const PromptSet& prompts) const override {
    return encode_text_synthetic(prompts, options_.embed_dim, options_.seed_namespace);
  }
  VisualFeatureMap encode_image(const Image& image) const override {
    return encode_image_synthetic(image, options_);
  }
  int patch_stride() const override { return options_.downsample; }
  int embed_dim() const override { return options_.embed_dim; }
  const SyntheticImageOptions& options() const { return options_; }

 private:
  SyntheticImageOptions options_;
};

/// Rejects a text/visual pair whose embedding widths differ.
void check_pairing(const TextEmbedding& text, const VisualFeatureMap& visual);

}  // namespace piseg
