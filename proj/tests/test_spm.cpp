#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "piseg/spm.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace piseg;
using piseg::testing::max_relative_fd_error;
using piseg::testing::random_matrix;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double min = 0.0;
  double max = 0.0;
};

Moments moments(const NoiseSpec& spec, int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, "moments");
  const Mat s = sample_noise(spec, 1, n, rng);
  Moments m;
  m.mean = s.mean();
  m.var = (s.array() - m.mean).square().sum() / (n - 1);
  m.min = s.minCoeff();
  m.max = s.maxCoeff();
  return m;
}

}  // namespace

TEST_CASE("standardized noise families have zero mean and unit variance") {
  for (auto family : {NoiseFamily::kGaussian, NoiseFamily::kLaplace, NoiseFamily::kUniform, NoiseFamily::kStudentT}) {
    CAPTURE(to_string(family));
    NoiseSpec spec{family, 10.0, true};
    const auto m = moments(spec, 1000000, 1);
    CHECK(std::abs(m.mean) <= 0.01);
    CHECK(std::abs(m.var - 1.0) <= 0.02);
  }
}

TEST_CASE("uniform standardized support") {
  const auto m = moments({NoiseFamily::kUniform, 10.0, true}, 200000, 2);
  CHECK(m.min >= -std::sqrt(3.0));
  CHECK(m.max <= std::sqrt(3.0));
  CHECK(m.max > 1.7);
}

TEST_CASE("raw student-t variance is df / (df - 2)") {
  const auto m = moments({NoiseFamily::kStudentT, 10.0, false}, 1000000, 3);
  CHECK(std::abs(m.var - 1.25) <= 0.05 * 1.25);
}

TEST_CASE("noise spec validation") {
  CHECK_THROWS_AS((NoiseSpec{NoiseFamily::kStudentT, 2.0, true}.validate()), Error);
  CHECK_NOTHROW((NoiseSpec{NoiseFamily::kStudentT, 2.0, false}.validate()));
  CHECK_NOTHROW((NoiseSpec{NoiseFamily::kGaussian, 1.0, true}.validate()));
  CHECK(parse_noise_family("student_t") == NoiseFamily::kStudentT);
  CHECK_THROWS_AS(parse_noise_family("cauchy"), Error);
  Rng rng(0);
  CHECK_THROWS_AS(sample_noise({}, 0, 3, rng), Error);
}

TEST_CASE("same seed gives the same draws") {
  Rng a = make_rng(5, "x"), b = make_rng(5, "x");
  CHECK(sample_noise({NoiseFamily::kLaplace, 10, true}, 4, 4, a) ==
        sample_noise({NoiseFamily::kLaplace, 10, true}, 4, 4, b));
}

TEST_CASE("init_spm_params shapes and scales") {
  Rng rng(1);
  const auto zero = init_spm_params(16, 0.0, 2, rng);
  CHECK(zero.text.mu.isZero(0.0));
  CHECK(zero.text.sigma.isZero(0.0));
  CHECK(zero.image.wo.isZero(0.0));
  CHECK(zero.image.bo.isZero(0.0));

  const auto p = init_spm_params(512, 0.02, 2, rng);
  CHECK(p.image.hidden_dim() == 256);
  CHECK(p.image.wo.rows() == 256);
  CHECK(p.image.wo.cols() == 1024);

  double sq = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r = make_rng(seed, "init");
    const auto q = init_spm_params(512, 0.02, 2, r);
    sq += q.text.mu.squaredNorm() + q.text.sigma.squaredNorm();
    count += 1024;
  }
  CHECK(std::abs(std::sqrt(sq / count) - 0.02) <= 0.15 * 0.02);

  CHECK_THROWS_AS(init_spm_params(8, 0.02, 9, rng), Error);
  CHECK_THROWS_AS(init_spm_params(8, -1.0, 2, rng), Error);
}

TEST_CASE("text perturbation hand example") {
  Mat t(1, 2);
  t << 1, 0;
  TextSpmParams p;
  p.mu.resize(1, 2);
  p.mu << 0.1, -0.1;
  p.sigma.resize(1, 2);
  p.sigma << 0.5, 0.5;
  Mat z(1, 2);
  z << 1, 1;
  const Mat out = text_spm_apply(t, p, z);
  CHECK(out(0, 0) == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("text perturbation matches direct evaluation and shares one draw") {
  Rng rng(3);
  const Mat t = random_matrix(5, 8, rng);
  TextSpmParams p{random_matrix(1, 8, rng), random_matrix(1, 8, rng), 0.0};
  const Mat z = random_matrix(1, 8, rng);
  const Mat lib = text_spm_apply(t, p, z);
  const Mat ref = oracle::text_perturbation(t, p.mu, p.sigma, z);
  CHECK((lib - ref).cwiseAbs().maxCoeff() <= 1e-12);
  // Same offset on every row.
  const Mat offset = lib - t;
  for (int n = 1; n < 5; ++n) CHECK((offset.row(n) - offset.row(0)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("text SPM modes") {
  Rng rng(4);
  TextEmbedding t{random_matrix(3, 8, rng), {"a", "b", "c"}};
  TextSpmParams p{random_matrix(1, 8, rng), random_matrix(1, 8, rng), 0.0};
  const NoiseSpec spec;
  CHECK(text_spm_forward(t, p, spec, SpmMode::kEval, rng).matrix == t.matrix);

  TextSpmParams zero{Mat::Zero(1, 8), Mat::Zero(1, 8), 0.0};
  CHECK(text_spm_forward(t, zero, spec, SpmMode::kTrain, rng).matrix == t.matrix);

  Rng a(9), b(9);
  CHECK(text_spm_forward(t, p, spec, SpmMode::kTrain, a).matrix ==
        text_spm_forward(t, p, spec, SpmMode::kTrain, b).matrix);

  p.mu(0, 2) = std::nan("");
  CHECK_THROWS_AS(text_spm_forward(t, p, spec, SpmMode::kTrain, rng), Error);
}

TEST_CASE("image SPM identities") {
  Rng rng(5);
  const int c = 8;
  VisualFeatureMap v{random_matrix(16, c, rng), {4, 4}, {16, 16}};
  TextEmbedding t{random_matrix(3, c, rng), {"a", "b", "c"}};
  auto params = init_spm_params(c, 0.02, 2, rng);
  const NoiseSpec spec;

  // Zero output projection: identity even in train mode.
  CHECK(image_spm_forward(v, t, params.image, spec, SpmMode::kTrain, rng).tensor == v.tensor);

  params.image.wo = random_matrix(params.image.hidden_dim(), 2 * c, rng);
  params.image.bo = random_matrix(1, 2 * c, rng);
  CHECK(image_spm_forward(v, t, params.image, spec, SpmMode::kEval, rng).tensor == v.tensor);
  CHECK(image_spm_forward(v, t, params.image, spec, SpmMode::kTrain, rng).tensor != v.tensor);

  // Reordering the class rows leaves the cue, hence the output, unchanged.
  const Mat z = random_matrix(16, c, rng);
  const Mat t_rev = (Mat(3, c) << t.matrix.row(2), t.matrix.row(1), t.matrix.row(0)).finished();
  const Mat a = image_spm_apply(v.tensor, t.matrix, params.image, z);
  const Mat b = image_spm_apply(v.tensor, t_rev, params.image, z);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-15);

  TextEmbedding narrow{random_matrix(3, c + 1, rng), {"a", "b", "c"}};
  CHECK_THROWS_AS(image_spm_forward(v, narrow, params.image, spec, SpmMode::kTrain, rng), Error);
}

TEST_CASE("SPM gradients match finite differences") {
  Rng rng(6);
  const int c = 8, n = 3, positions = 16;
  const Mat text = random_matrix(n, c, rng);
  const Mat visual = random_matrix(positions, c, rng);
  auto params = init_spm_params(c, 0.3, 2, rng);
  params.image.wo = random_matrix(params.image.hidden_dim(), 2 * c, rng, 0.5);
  params.image.bo = random_matrix(1, 2 * c, rng, 0.5);
  const Mat zt = random_matrix(1, c, rng);
  const Mat zv = random_matrix(positions, c, rng);
  const Mat wt = random_matrix(n, c, rng);
  const Mat wv = random_matrix(positions, c, rng);

  // Scalar loss with non-trivial weights on both outputs.
  auto loss = [&]() {
    const Mat th = text_spm_apply(text, params.text, zt);
    const Mat vh = image_spm_apply(visual, th, params.image, zv);
    return (th.array() * wt.array()).sum() + 0.5 * vh.array().square().cwiseProduct(wv.array()).sum();
  };

  ImageSpmCache cache;
  const Mat th = text_spm_apply(text, params.text, zt);
  const Mat vh = image_spm_apply(visual, th, params.image, zv, &cache);
  const Mat grad_vh = (vh.array() * wv.array()).matrix();
  auto image_grads = zeros_like(params.image);
  const Mat grad_th = image_spm_backward(grad_vh, visual, params.image, cache, image_grads) + wt;
  auto text_grads = zeros_like(params.text);
  text_spm_backward(grad_th, params.text, zt, text_grads);

  CHECK(max_relative_fd_error(params.text.mu, text_grads.mu, loss) <= 1e-4);
  CHECK(max_relative_fd_error(params.text.sigma, text_grads.sigma, loss) <= 1e-4);
  std::vector<NamedTensor> ps, gs;
  params.image.collect(ps, "");
  image_grads.collect(gs, "");
  for (size_t i = 0; i < ps.size(); ++i) {
    CAPTURE(ps[i].name);
    CHECK(max_relative_fd_error(*ps[i].tensor, *gs[i].tensor, loss) <= 1e-4);
  }
}
