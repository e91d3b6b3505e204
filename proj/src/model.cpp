#include "piseg/model.hpp"

#include <random>

namespace piseg {

void ModelConfig::validate() const {
  PISEG_CHECK(embed_dim >= 2, "embed_dim must be at least 2");
  aggregator.validate();
  PISEG_CHECK(decoder_stages >= 0, "decoder_stages must be >= 0");
  PISEG_CHECK(reduction_ratio >= 1 && reduction_ratio <= embed_dim,
              "reduction ratio must lie in [1, embed_dim], got " << reduction_ratio);
  PISEG_CHECK(sigma_t >= 0.0, "sigma_t must be >= 0");
  PISEG_CHECK(cosine_eps > 0.0, "cosine eps must be positive");
  noise.validate();
}

std::vector<NamedTensor> ModelParams::tensors() {
  std::vector<NamedTensor> out;
  spm.text.collect(out, "text_spm.");
  spm.image.collect(out, "image_spm.");
  embed.collect(out, "cost_embed.");
  for (size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, "aggregator.block" + std::to_string(b) + ".");
  decoder.collect(out, "decoder.");
  return out;
}

std::vector<NamedTensor> ModelParams::trainable(const ModelConfig& config) {
  std::vector<NamedTensor> out;
  if (config.text_spm) spm.text.collect(out, "text_spm.");
  if (config.image_spm && !config.freeze_image_spm) spm.image.collect(out, "image_spm.");
  embed.collect(out, "cost_embed.");
  for (size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, "aggregator.block" + std::to_string(b) + ".");
  decoder.collect(out, "decoder.");
  return out;
}

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.spm = init_spm_params(config.embed_dim, config.sigma_t, config.reduction_ratio, rng);
  const int dim = config.aggregator.feature_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  p.embed.weight.resize(1, dim);
  for (int i = 0; i < dim; ++i) p.embed.weight(0, i) = normal(rng);
  p.embed.bias = Mat::Zero(1, dim);
  p.blocks = init_aggregator(config.aggregator, rng);
  p.decoder = init_decoder(dim, config.decoder_stages, rng);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams g = params;
  for (auto& t : g.tensors()) t.tensor->setZero();
  return g;
}

NoiseDraw draw_noise(const ModelConfig& config, Eigen::Index positions, Rng& rng) {
  NoiseDraw d;
  d.text = sample_noise(config.noise, 1, config.embed_dim, rng);
  d.visual = sample_noise(config.noise, positions, config.embed_dim, rng);
  return d;
}

PerturbedEmbeddings perturb(const ModelConfig& config, const ModelParams& params, const Mat& text,
                            const Mat& visual, SpmMode mode, const NoiseDraw* noise,
                            ImageSpmCache* image_cache) {
  PISEG_CHECK(text.cols() == visual.cols(), "embedding width mismatch: text " << text.cols() << " vs visual "
                                                                             << visual.cols());
  PerturbedEmbeddings out;
  if (mode == SpmMode::kEval) {
    out.text_hat = text;
    out.visual_hat = visual;
    return out;
  }
  const bool any = config.text_spm || config.image_spm;
  PISEG_CHECK(!any || noise != nullptr, "train-mode forward needs a noise draw");
  out.text_hat = config.text_spm ? text_spm_apply(text, params.spm.text, noise->text) : text;
  out.visual_hat = config.image_spm
                       ? image_spm_apply(visual, out.text_hat, params.spm.image, noise->visual, image_cache)
                       : visual;
  return out;
}

CostVolume raw_cost(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
                    const VisualFeatureMap& visual, SpmMode mode, const NoiseDraw* noise) {
  check_pairing(text, visual);
  const auto emb = perturb(config, params, text.matrix, visual.tensor, mode, noise);
  CostVolume cost;
  cost.grid = visual.grid;
  cost.tensor = cost_volume_apply(emb.visual_hat, emb.text_hat, config.cosine_eps);
  return cost;
}

Logits forward(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
               const VisualFeatureMap& visual, GridSize target, SpmMode mode, const NoiseDraw* noise,
               ForwardCache* cache) {
  check_pairing(text, visual);
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.perturbed_text = mode == SpmMode::kTrain && config.text_spm;
  c.perturbed_visual = mode == SpmMode::kTrain && config.image_spm;
  if (noise) c.noise = *noise;

  auto emb = perturb(config, params, text.matrix, visual.tensor, mode, noise, &c.image_spm);
  c.visual = visual.tensor;
  c.text_hat = std::move(emb.text_hat);

  c.cost.grid = visual.grid;
  c.cost.tensor = cost_volume_apply(emb.visual_hat, c.text_hat, config.cosine_eps, &c.cost_cache);
  c.embedded = embed_cost(c.cost, params.embed);
  const CostFeatureVolume aggregated = aggregate(c.embedded, config.aggregator, params.blocks, &c.aggregation);
  Logits logits = decode(aggregated, target, params.decoder, &c.decoder);
  logits.class_names = text.class_names;
  return logits;
}

void backward(const ModelConfig& config, const ModelParams& params, const ForwardCache& c,
              const Mat& grad_logits, ModelParams& grads) {
  const Mat grad_aggregated = decode_backward(grad_logits, params.decoder, c.decoder, grads.decoder);
  const Mat grad_embedded =
      aggregate_backward(grad_aggregated, c.embedded, config.aggregator, params.blocks, c.aggregation, grads.blocks);
  Mat grad_cost;
  embed_cost_backward(grad_embedded, c.cost, params.embed, grads.embed, &grad_cost);

  if (!c.perturbed_text && !c.perturbed_visual) return;

  // Encoders are frozen: gradients stop at the SPM parameters.
  Mat grad_visual_hat;
  Mat grad_text_hat;
  cost_volume_backward(grad_cost, c.cost_cache, c.perturbed_visual ? &grad_visual_hat : nullptr,
                       c.perturbed_text ? &grad_text_hat : nullptr);
  if (c.perturbed_visual) {
    ImageSpmParams scratch;
    ImageSpmParams& image_grads = config.freeze_image_spm ? (scratch = zeros_like(params.spm.image)) : grads.spm.image;
    const Mat through_cue = image_spm_backward(grad_visual_hat, c.visual, params.spm.image, c.image_spm, image_grads);
    if (c.perturbed_text) grad_text_hat += through_cue;
  }
  if (c.perturbed_text) text_spm_backward(grad_text_hat, params.spm.text, c.noise.text, grads.spm.text);
}

}  // namespace piseg
