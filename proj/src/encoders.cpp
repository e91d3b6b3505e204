#include "piseg/encoders.hpp"

#include <cmath>
#include <random>

#include "piseg/rng.hpp"

namespace piseg {

namespace {

constexpr std::string_view kPlaceholder = "{class}";

std::string color_key(const Rgb8& rgb) {
  return "rgb:" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," + std::to_string(rgb[2]);
}

}  // namespace

PromptSet apply_prompt_template(const std::vector<std::string>& class_names,
                                const std::string& template_text) {
  const auto first = template_text.find(kPlaceholder);
  PISEG_CHECK(first != std::string::npos,
              "prompt template has no {class} placeholder: \"" << template_text << "\"");
  PISEG_CHECK(template_text.find(kPlaceholder, first + 1) == std::string::npos,
              "prompt template has more than one {class} placeholder: \"" << template_text << "\"");

  PromptSet set;
  set.class_names = class_names;
  set.template_text = template_text;
  set.prompts.reserve(class_names.size());
  for (const auto& name : class_names) {
    PISEG_CHECK(!name.empty(), "class names must be non-empty");
    std::string prompt = template_text;
    prompt.replace(first, kPlaceholder.size(), name);
    set.prompts.push_back(std::move(prompt));
  }
  return set;
}

RowVec hashed_unit_vector(const std::string& key, int embed_dim, const std::string& seed_namespace) {
  Rng rng(splitmix64(fnv1a64(key, fnv1a64(seed_namespace + '\x1f'))));
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVec v(embed_dim);
  for (int i = 0; i < embed_dim; ++i) v[i] = normal(rng);
  const double norm = v.norm();
  // A zero draw is not reachable in practice; guard anyway so the output is unit norm.
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

TextEmbedding encode_text_synthetic(const PromptSet& prompts, int embed_dim,
                                    const std::string& seed_namespace) {
  PISEG_CHECK(embed_dim >= 2, "embed_dim must be at least 2, got " << embed_dim);
  TextEmbedding out;
  out.class_names = prompts.class_names;
  out.matrix.resize(static_cast<Eigen::Index>(prompts.prompts.size()), embed_dim);
  for (size_t i = 0; i < prompts.prompts.size(); ++i) {
    out.matrix.row(static_cast<Eigen::Index>(i)) =
        hashed_unit_vector("text:" + prompts.prompts[i], embed_dim, seed_namespace);
  }
  return out;
}

VisualFeatureMap encode_image_synthetic(const Image& image, const SyntheticImageOptions& options) {
  const int k = options.downsample;
  PISEG_CHECK(options.embed_dim >= 2, "embed_dim must be at least 2");
  PISEG_CHECK(k >= 1, "downsample must be positive");
  PISEG_CHECK(image.height % k == 0 && image.width % k == 0,
              "image " << image.height << "x" << image.width << " not divisible by patch stride " << k);
  PISEG_CHECK(options.alignment >= 0.0 && options.alignment <= 1.0, "alignment must lie in [0, 1]");

  VisualFeatureMap out;
  out.grid = {image.height / k, image.width / k};
  out.source_size = {image.height, image.width};
  out.tensor.resize(out.grid.area(), options.embed_dim);

  // Patches of one color share a feature, so cache per color.
  std::map<Rgb8, RowVec> cache;
  const double inv = 1.0 / (k * k);
  for (int gy = 0; gy < out.grid.height; ++gy) {
    for (int gx = 0; gx < out.grid.width; ++gx) {
      Rgb8 mean{};
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int y = gy * k; y < (gy + 1) * k; ++y) {
          for (int x = gx * k; x < (gx + 1) * k; ++x) sum += image.at(y, x, c);
        }
        mean[c] = static_cast<std::uint8_t>(std::lround(std::clamp(sum * inv, 0.0, 1.0) * 255.0));
      }
      auto it = cache.find(mean);
      if (it == cache.end()) {
        RowVec feature = hashed_unit_vector(color_key(mean), options.embed_dim, options.seed_namespace);
        if (auto bound = options.lexicon.find(mean);
            bound != options.lexicon.end() && options.alignment > 0.0) {
          const RowVec text = hashed_unit_vector("text:" + bound->second, options.embed_dim,
                                                 options.seed_namespace);
          feature = options.alignment * text + (1.0 - options.alignment) * feature;
          feature /= feature.norm();
        }
        it = cache.emplace(mean, std::move(feature)).first;
      }
      out.tensor.row(gy * out.grid.width + gx) = it->second;
    }
  }
  return out;
}

VisualFeatureMap encode_image_synthetic(const Image& image, int embed_dim, int downsample,
                                        const std::string& seed_namespace) {
  SyntheticImageOptions options;
  options.embed_dim = embed_dim;
  options.downsample = downsample;
  options.seed_namespace = seed_namespace;
  return encode_image_synthetic(image, options);
}

void check_pairing(const TextEmbedding& text, const VisualFeatureMap& visual) {
  PISEG_CHECK(text.embed_dim() == visual.embed_dim(),
              "embedding width mismatch: text " << text.embed_dim() << " vs visual " << visual.embed_dim());
  PISEG_CHECK(text.num_classes() >= 1, "text embedding has no classes");
  PISEG_CHECK(visual.grid.height >= 1 && visual.grid.width >= 1, "empty visual feature grid");
}

}  // namespace piseg
