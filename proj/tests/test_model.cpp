#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "piseg/model.hpp"
#include "piseg/train.hpp"
#include "support/test_support.hpp"

using namespace piseg;
using piseg::testing::max_relative_fd_error;
using piseg::testing::random_matrix;
using piseg::testing::random_map;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.aggregator = {1, 6, 3};
  c.decoder_stages = 1;
  c.reduction_ratio = 2;
  c.sigma_t = 0.3;
  return c;
}

void randomize_image_spm(ModelParams& p, Rng& rng) {
  p.spm.image.wo = random_matrix(p.spm.image.wo.rows(), p.spm.image.wo.cols(), rng, 0.5);
  p.spm.image.bo = random_matrix(1, p.spm.image.bo.cols(), rng, 0.5);
}

}  // namespace

TEST_CASE("eval mode equals the pipeline without perturbation modules") {
  Rng rng(1);
  ModelConfig with = small_config();
  ModelConfig without = with;
  without.text_spm = false;
  without.image_spm = false;
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  for (int trial = 0; trial < 5; ++trial) {
    auto params = init_model(with, rng);
    randomize_image_spm(params, rng);
    const auto a = forward(with, params, text, visual, {16, 16}, SpmMode::kEval, nullptr);
    const auto b = forward(without, params, text, visual, {16, 16}, SpmMode::kEval, nullptr);
    CHECK(a.tensor == b.tensor);
  }
}

TEST_CASE("train mode needs a noise draw and perturbs the output") {
  Rng rng(2);
  const ModelConfig cfg = small_config();
  auto params = init_model(cfg, rng);
  randomize_image_spm(params, rng);
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  CHECK_THROWS_AS(forward(cfg, params, text, visual, {16, 16}, SpmMode::kTrain, nullptr), Error);
  const auto noise = draw_noise(cfg, 16, rng);
  const auto train = forward(cfg, params, text, visual, {16, 16}, SpmMode::kTrain, &noise);
  const auto eval = forward(cfg, params, text, visual, {16, 16}, SpmMode::kEval, nullptr);
  CHECK(train.tensor != eval.tensor);
}

TEST_CASE("identity perturbations at initialization give train/eval parity") {
  Rng rng(3);
  ModelConfig cfg = small_config();
  cfg.sigma_t = 0.0;
  const auto params = init_model(cfg, rng);
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  for (auto family : {NoiseFamily::kGaussian, NoiseFamily::kLaplace, NoiseFamily::kUniform, NoiseFamily::kStudentT}) {
    cfg.noise.family = family;
    const auto noise = draw_noise(cfg, 16, rng);
    const auto train = forward(cfg, params, text, visual, {16, 16}, SpmMode::kTrain, &noise);
    const auto eval = forward(cfg, params, text, visual, {16, 16}, SpmMode::kEval, nullptr);
    CHECK(train.tensor == eval.tensor);
  }
}

TEST_CASE("end-to-end gradients of the training loss") {
  Rng rng(4);
  const ModelConfig cfg = small_config();
  auto params = init_model(cfg, rng);
  randomize_image_spm(params, rng);
  params.blocks[0].relative_bias = random_matrix(1, 9, rng, 0.3);
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {12, 12}};
  const GridSize target{12, 12};
  const auto mask = random_map(12, 12, 3, rng, 0.1);
  const auto noise = draw_noise(cfg, 16, rng);

  auto loss = [&]() {
    const auto logits = forward(cfg, params, text, visual, target, SpmMode::kTrain, &noise);
    return compute_loss(logits, mask);
  };

  ForwardCache cache;
  const auto logits = forward(cfg, params, text, visual, target, SpmMode::kTrain, &noise, &cache);
  Mat grad_logits;
  compute_loss(logits, mask, &grad_logits);
  auto grads = zeros_like(params);
  backward(cfg, params, cache, grad_logits, grads);

  auto ps = params.tensors();
  auto gs = grads.tensors();
  REQUIRE(ps.size() == gs.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    CAPTURE(ps[i].name);
    CHECK(max_relative_fd_error(*ps[i].tensor, *gs[i].tensor, loss) <= 1e-4);
  }
}

TEST_CASE("frozen image SPM is excluded from the trainable set") {
  ModelConfig cfg = small_config();
  Rng rng(5);
  auto params = init_model(cfg, rng);
  auto names = [](std::vector<NamedTensor> ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.name);
    return out;
  };
  const auto all = names(params.trainable(cfg));
  CHECK(std::find(all.begin(), all.end(), "image_spm.wo") != all.end());
  cfg.freeze_image_spm = true;
  const auto frozen = names(params.trainable(cfg));
  CHECK(std::find(frozen.begin(), frozen.end(), "image_spm.wo") == frozen.end());
  CHECK(std::find(frozen.begin(), frozen.end(), "text_spm.mu") != frozen.end());
  cfg.text_spm = false;
  const auto no_text = names(params.trainable(cfg));
  CHECK(std::find(no_text.begin(), no_text.end(), "text_spm.mu") == no_text.end());
}

TEST_CASE("class permutation equivariance end to end") {
  Rng rng(6);
  ModelConfig cfg = small_config();
  const auto params = init_model(cfg, rng);
  TextEmbedding text{random_matrix(4, 8, rng), {"a", "b", "c", "d"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  const std::vector<int> perm = {3, 1, 0, 2};
  TextEmbedding permuted = text;
  for (size_t k = 0; k < perm.size(); ++k) permuted.matrix.row(static_cast<Eigen::Index>(k)) = text.matrix.row(perm[k]);

  const auto a = forward(cfg, params, text, visual, {16, 16}, SpmMode::kEval, nullptr);
  const auto b = forward(cfg, params, permuted, visual, {16, 16}, SpmMode::kEval, nullptr);
  for (size_t k = 0; k < perm.size(); ++k) {
    CHECK((a.tensor.col(perm[k]) - b.tensor.col(static_cast<Eigen::Index>(k))).cwiseAbs().maxCoeff() <= 1e-5);
  }
}
