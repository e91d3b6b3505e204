#include "piseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace piseg {

void TrainConfig::validate() const {
  PISEG_CHECK(total_steps >= 0, "total_steps must be >= 0");
  PISEG_CHECK(batch_size >= 1, "batch_size must be >= 1");
  PISEG_CHECK(base_lr > 0.0 && std::isfinite(base_lr), "base_lr must be positive");
  PISEG_CHECK(warmup_steps >= 0, "warmup_steps must be >= 0");
  PISEG_CHECK(weight_decay >= 0.0, "weight_decay must be >= 0");
  PISEG_CHECK(grad_clip >= 0.0, "grad_clip must be >= 0");
  PISEG_CHECK(log_every >= 1, "log_every must be >= 1");
  PISEG_CHECK(diag_every >= 0, "diag_every must be >= 0");
  PISEG_CHECK(diag_draws >= 1, "diag_draws must be >= 1");
  PISEG_CHECK(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

double lr_at(std::int64_t step, const TrainConfig& config) {
  step = std::clamp<std::int64_t>(step, 0, config.total_steps);
  if (step < config.warmup_steps) {
    return config.base_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  const std::int64_t decay_steps = config.total_steps - config.warmup_steps;
  if (decay_steps <= 0) return config.base_lr;
  const double progress = static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay_steps);
  return std::max(0.0, config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

CrossEntropy cross_entropy_sum(const Logits& logits, const SegmentationMap& gt, Mat* grad,
                               std::uint8_t ignore_index) {
  PISEG_CHECK(logits.size.height == gt.height && logits.size.width == gt.width,
              "logits " << logits.size.height << "x" << logits.size.width << " do not match labels " << gt.height
                        << "x" << gt.width);
  const int classes = logits.num_classes();
  CrossEntropy ce;
  if (grad) *grad = Mat::Zero(logits.tensor.rows(), classes);
  for (Eigen::Index i = 0; i < logits.tensor.rows(); ++i) {
    const auto label = gt.labels[static_cast<size_t>(i)];
    if (label == ignore_index) continue;
    PISEG_CHECK(label < classes, "label " << int(label) << " out of range for " << classes << " classes");
    const auto row = logits.tensor.row(i);
    const double m = row.maxCoeff();
    const double sum_exp = (row.array() - m).exp().sum();
    ce.sum += m + std::log(sum_exp) - row(label);
    ++ce.count;
    if (grad) {
      grad->row(i) = ((row.array() - m).exp() / sum_exp).matrix();
      (*grad)(i, label) -= 1.0;
    }
  }
  return ce;
}

double compute_loss(const Logits& logits, const SegmentationMap& gt, Mat* grad, std::uint8_t ignore_index) {
  const CrossEntropy ce = cross_entropy_sum(logits, gt, grad, ignore_index);
  if (ce.count == 0) return 0.0;
  if (grad) *grad /= static_cast<double>(ce.count);
  return ce.sum / static_cast<double>(ce.count);
}

void adamw_update(std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads, AdamState& state,
                  double lr, const TrainConfig& config) {
  PISEG_CHECK(params.size() == grads.size(), "parameter/gradient lists differ in length");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    PISEG_CHECK(params[i].name == grads[i].name, "parameter/gradient order mismatch at " << params[i].name);
    Mat& p = *params[i].tensor;
    const Mat& g = *grads[i].tensor;
    auto [m_it, m_new] = state.m.try_emplace(params[i].name, Mat::Zero(p.rows(), p.cols()));
    auto [v_it, v_new] = state.v.try_emplace(params[i].name, Mat::Zero(p.rows(), p.cols()));
    Mat& m = m_it->second;
    Mat& v = v_it->second;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    p -= (lr * config.weight_decay) * p;
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.adam_eps);
  }
}

double clip_global_norm(const std::vector<NamedTensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.tensor->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) *g.tensor *= scale;
  }
  return norm;
}

nlohmann::json StepMetrics::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["loss"] = loss;
  j["lr"] = lr;
  j["grad_norm"] = grad_norm;
  if (delta) {
    j["gt_in_mean"] = delta->gt_in_mean;
    j["non_gt_mean"] = delta->non_gt_mean;
    j["gap"] = delta->gap;
    j["align_ratio"] = delta->align_ratio;
  }
  return j;
}

std::vector<int> batch_indices(std::int64_t step, int batch_size, size_t dataset_size, std::uint64_t seed) {
  PISEG_CHECK(dataset_size > 0, "empty training set");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(batch_size));
  std::int64_t cached_epoch = -1;
  std::vector<int> perm(dataset_size);
  for (int j = 0; j < batch_size; ++j) {
    const std::int64_t q = step * batch_size + j;
    const std::int64_t epoch = q / static_cast<std::int64_t>(dataset_size);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = make_rng(seed, "data", static_cast<std::uint64_t>(epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<size_t>(q % static_cast<std::int64_t>(dataset_size))]);
  }
  return out;
}

StepMetrics train_step(const std::vector<int>& batch, const TrainingData& data, ModelParams& params,
                       AdamState& opt, const ModelConfig& model_config, const TrainConfig& config,
                       std::int64_t step, Rng& rng) {
  ModelParams grads = zeros_like(params);
  const bool stochastic = model_config.text_spm || model_config.image_spm;
  double loss_sum = 0.0;
  std::int64_t count = 0;
  for (int idx : batch) {
    const auto& visual = data.features.at(static_cast<size_t>(idx));
    const auto& mask = data.masks.at(static_cast<size_t>(idx));
    NoiseDraw noise;
    if (stochastic) noise = draw_noise(model_config, visual.tensor.rows(), rng);
    ForwardCache cache;
    const Logits logits = forward(model_config, params, data.text, visual, {mask.height, mask.width},
                                  SpmMode::kTrain, stochastic ? &noise : nullptr, &cache);
    Mat grad_logits;
    const CrossEntropy ce = cross_entropy_sum(logits, mask, &grad_logits);
    loss_sum += ce.sum;
    count += ce.count;
    if (ce.count > 0) backward(model_config, params, cache, grad_logits, grads);
  }

  StepMetrics metrics;
  metrics.step = step;
  metrics.loss = count > 0 ? loss_sum / static_cast<double>(count) : 0.0;
  metrics.lr = lr_at(step, config);
  if (!std::isfinite(metrics.loss)) {
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step));
  }

  auto trainable_grads = grads.trainable(model_config);
  if (count > 0) {
    for (auto& g : trainable_grads) *g.tensor /= static_cast<double>(count);
  }
  metrics.grad_norm = clip_global_norm(trainable_grads, config.grad_clip);
  auto trainable_params = params.trainable(model_config);
  adamw_update(trainable_params, trainable_grads, opt, metrics.lr, config);
  return metrics;
}

std::optional<DeltaStats> batch_delta_stats(const std::vector<int>& batch, const TrainingData& data,
                                            const ModelParams& params, const ModelConfig& model_config,
                                            int draws, Rng& rng) {
  std::vector<DeltaStats> per_image;
  for (int idx : batch) {
    const auto& visual = data.features.at(static_cast<size_t>(idx));
    const CostVolume delta = delta_cost(model_config, params, data.text, visual, rng, draws);
    const SegmentationMap gt_grid = downsample_majority(data.masks.at(static_cast<size_t>(idx)), data.patch_stride);
    if (auto s = delta_stats(delta, gt_grid)) per_image.push_back(*s);
  }
  return average_delta_stats(per_image);
}

Trainer::Trainer(ModelConfig model_config, TrainConfig config, const TrainingData& data)
    : model_config_(std::move(model_config)), config_(std::move(config)), data_(data) {
  model_config_.validate();
  config_.validate();
  PISEG_CHECK(data_.size() > 0, "training set is empty");
  PISEG_CHECK(data_.text.embed_dim() == model_config_.embed_dim,
              "text embedding width " << data_.text.embed_dim() << " != model embed_dim " << model_config_.embed_dim);
  Rng init_rng = make_rng(config_.seed, "init");
  params_ = init_model(model_config_, init_rng);
}

StepMetrics Trainer::step() {
  PISEG_CHECK(!done(), "training already finished");
  const std::int64_t s = completed_;
  const auto batch = batch_indices(s, config_.batch_size, data_.size(), config_.seed);
  std::optional<DeltaStats> delta;
  if (config_.diag_every > 0 && s % config_.diag_every == 0) {
    Rng diag_rng = make_rng(config_.seed, "diagnostics", static_cast<std::uint64_t>(s));
    delta = batch_delta_stats(batch, data_, params_, model_config_, config_.diag_draws, diag_rng);
    if (delta) delta->step = s;
  }
  Rng noise_rng = make_rng(config_.seed, "noise", static_cast<std::uint64_t>(s));
  StepMetrics metrics = train_step(batch, data_, params_, opt_, model_config_, config_, s, noise_rng);
  metrics.delta = delta;
  ++completed_;
  return metrics;
}

void store_params(Checkpoint& ck, ModelParams& params) {
  for (const auto& t : params.tensors()) ck.tensors.emplace_back(t.name, *t.tensor);
}

void load_params(const Checkpoint& ck, ModelParams& params) {
  for (auto& t : params.tensors()) {
    const Mat& stored = ck.tensor(t.name);
    PISEG_CHECK(stored.rows() == t.tensor->rows() && stored.cols() == t.tensor->cols(),
                "checkpoint tensor " << t.name << " is " << stored.rows() << "x" << stored.cols() << ", model expects "
                                     << t.tensor->rows() << "x" << t.tensor->cols());
    *t.tensor = stored;
  }
}

Checkpoint Trainer::checkpoint(const nlohmann::json& run_config) const {
  Checkpoint ck;
  ck.metadata["format"] = "piseg-checkpoint";
  ck.metadata["format_version"] = 1;
  ck.metadata["step"] = completed_;
  ck.metadata["config"] = run_config;
  ck.metadata["rng"] = {{"seed", config_.seed}, {"derivation", "per-step streams derived from (seed, component, step)"}};
  ck.metadata["adam_t"] = opt_.t;
  ModelParams copy = params_;
  store_params(ck, copy);
  for (const auto& [name, m] : opt_.m) ck.tensors.emplace_back("adam.m." + name, m);
  for (const auto& [name, v] : opt_.v) ck.tensors.emplace_back("adam.v." + name, v);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  load_params(ck, params_);
  opt_ = AdamState{};
  opt_.t = ck.metadata.at("adam_t").get<std::int64_t>();
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam.m.", 0) == 0) opt_.m[name.substr(7)] = t;
    if (name.rfind("adam.v.", 0) == 0) opt_.v[name.substr(7)] = t;
  }
  completed_ = ck.metadata.at("step").get<std::int64_t>();
  PISEG_CHECK(completed_ <= config_.total_steps,
              "checkpoint step " << completed_ << " exceeds total_steps " << config_.total_steps);
}

}  // namespace piseg
