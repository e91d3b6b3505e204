#include "piseg/spm.hpp"

#include <cmath>
#include <random>

namespace piseg {

std::string to_string(NoiseFamily family) {
  switch (family) {
    case NoiseFamily::kGaussian: return "gaussian";
    case NoiseFamily::kLaplace: return "laplace";
    case NoiseFamily::kUniform: return "uniform";
    case NoiseFamily::kStudentT: return "student_t";
  }
  return "unknown";
}

NoiseFamily parse_noise_family(const std::string& text) {
  if (text == "gaussian") return NoiseFamily::kGaussian;
  if (text == "laplace") return NoiseFamily::kLaplace;
  if (text == "uniform") return NoiseFamily::kUniform;
  if (text == "student_t") return NoiseFamily::kStudentT;
  throw Error("unknown noise family \"" + text + "\" (expected gaussian, laplace, uniform, student_t)");
}

void NoiseSpec::validate() const {
  if (family != NoiseFamily::kStudentT) return;
  PISEG_CHECK(std::isfinite(df) && df > 0.0, "student_t degrees of freedom must be positive, got " << df);
  PISEG_CHECK(!standardized || df > 2.0,
              "standardized student_t needs df > 2 for finite variance, got " << df);
}

Mat sample_noise(const NoiseSpec& spec, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  spec.validate();
  PISEG_CHECK(rows > 0 && cols > 0, "noise shape must be non-empty");
  Mat out(rows, cols);
  double* data = out.data();
  const Eigen::Index n = out.size();

  // Distributions are built per call so no cached state outlives it; the
  // engine alone carries the stream.
  switch (spec.family) {
    case NoiseFamily::kGaussian: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) data[i] = dist(rng);
      break;
    }
    case NoiseFamily::kLaplace: {
      const double scale = spec.standardized ? 1.0 / std::sqrt(2.0) : 1.0;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        double u = 0.0;
        do {
          u = unit(rng) - 0.5;
        } while (std::abs(u) >= 0.5);
        data[i] = -scale * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
      }
      break;
    }
    case NoiseFamily::kUniform: {
      const double half_width = spec.standardized ? std::sqrt(3.0) : 1.0;
      std::uniform_real_distribution<double> dist(-half_width, half_width);
      for (Eigen::Index i = 0; i < n; ++i) data[i] = dist(rng);
      break;
    }
    case NoiseFamily::kStudentT: {
      std::student_t_distribution<double> dist(spec.df);
      const double scale = spec.standardized ? std::sqrt((spec.df - 2.0) / spec.df) : 1.0;
      for (Eigen::Index i = 0; i < n; ++i) data[i] = scale * dist(rng);
      break;
    }
  }
  return out;
}

void TextSpmParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  out.push_back({prefix + "mu", &mu});
  out.push_back({prefix + "sigma", &sigma});
}

void ImageSpmParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  out.push_back({prefix + "wq", &wq});
  out.push_back({prefix + "bq", &bq});
  out.push_back({prefix + "wk", &wk});
  out.push_back({prefix + "bk", &bk});
  out.push_back({prefix + "wv", &wv});
  out.push_back({prefix + "bv", &bv});
  out.push_back({prefix + "wo", &wo});
  out.push_back({prefix + "bo", &bo});
}

namespace {

Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  if (stddev == 0.0) {
    m.setZero();
    return m;
  }
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

SpmParams init_spm_params(int embed_dim, double sigma_t, int reduction_ratio, Rng& rng) {
  PISEG_CHECK(embed_dim >= 2, "embed_dim must be at least 2, got " << embed_dim);
  PISEG_CHECK(reduction_ratio >= 1, "reduction ratio must be >= 1, got " << reduction_ratio);
  PISEG_CHECK(reduction_ratio <= embed_dim,
              "reduction ratio " << reduction_ratio << " exceeds embed_dim " << embed_dim);
  PISEG_CHECK(std::isfinite(sigma_t) && sigma_t >= 0.0, "sigma_t must be finite and >= 0");

  const int hidden = embed_dim / reduction_ratio;
  SpmParams p;
  p.text.init_scale = sigma_t;
  p.text.mu = gaussian_matrix(1, embed_dim, sigma_t, rng);
  p.text.sigma = gaussian_matrix(1, embed_dim, sigma_t, rng);

  const double proj_std = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  auto& img = p.image;
  img.reduction_ratio = reduction_ratio;
  img.wq = gaussian_matrix(embed_dim, hidden, proj_std, rng);
  img.wk = gaussian_matrix(embed_dim, hidden, proj_std, rng);
  img.wv = gaussian_matrix(embed_dim, hidden, proj_std, rng);
  img.bq = Mat::Zero(1, hidden);
  img.bk = Mat::Zero(1, hidden);
  img.bv = Mat::Zero(1, hidden);
  // Zero output projection: the module starts as an exact identity.
  img.wo = Mat::Zero(hidden, 2 * embed_dim);
  img.bo = Mat::Zero(1, 2 * embed_dim);
  return p;
}

TextSpmParams zeros_like(const TextSpmParams& like) {
  TextSpmParams g;
  g.mu = Mat::Zero(like.mu.rows(), like.mu.cols());
  g.sigma = Mat::Zero(like.sigma.rows(), like.sigma.cols());
  g.init_scale = like.init_scale;
  return g;
}

ImageSpmParams zeros_like(const ImageSpmParams& like) {
  ImageSpmParams g;
  auto z = [](const Mat& m) { return Mat::Zero(m.rows(), m.cols()); };
  g.wq = z(like.wq);
  g.bq = z(like.bq);
  g.wk = z(like.wk);
  g.bk = z(like.bk);
  g.wv = z(like.wv);
  g.bv = z(like.bv);
  g.wo = z(like.wo);
  g.bo = z(like.bo);
  g.reduction_ratio = like.reduction_ratio;
  return g;
}

// ---- Text-SPM -------------------------------------------------------------

namespace {

void check_text_params(const TextSpmParams& params, Eigen::Index embed_dim) {
  PISEG_CHECK(params.mu.rows() == 1 && params.mu.cols() == embed_dim &&
                  params.sigma.rows() == 1 && params.sigma.cols() == embed_dim,
              "Text-SPM parameters do not match embed_dim " << embed_dim);
  PISEG_CHECK(params.mu.allFinite() && params.sigma.allFinite(), "Text-SPM parameters contain NaN/Inf");
}

}  // namespace

Mat text_spm_apply(const Mat& text, const TextSpmParams& params, const Mat& z) {
  check_text_params(params, text.cols());
  PISEG_CHECK(z.rows() == 1 && z.cols() == text.cols(), "Text-SPM noise must be 1 x C");
  const Mat eps = params.sigma.cwiseAbs().cwiseProduct(z) + params.mu;
  Mat out = text;
  out.rowwise() += eps.row(0);
  return out;
}

void text_spm_backward(const Mat& grad_text_hat, const TextSpmParams& params, const Mat& z,
                       TextSpmParams& grads) {
  const Mat col_sum = grad_text_hat.colwise().sum();
  grads.mu += col_sum;
  for (Eigen::Index c = 0; c < col_sum.cols(); ++c) {
    grads.sigma(0, c) += col_sum(0, c) * z(0, c) * sign(params.sigma(0, c));
  }
}

TextEmbedding text_spm_forward(const TextEmbedding& text, const TextSpmParams& params,
                               const NoiseSpec& spec, SpmMode mode, Rng& rng) {
  check_text_params(params, text.embed_dim());
  if (mode == SpmMode::kEval) return text;
  const Mat z = sample_noise(spec, 1, text.embed_dim(), rng);
  TextEmbedding out;
  out.class_names = text.class_names;
  out.matrix = text_spm_apply(text.matrix, params, z);
  return out;
}

// ---- Image-SPM ------------------------------------------------------------

namespace {

void check_image_params(const ImageSpmParams& p, Eigen::Index embed_dim) {
  const Eigen::Index h = p.wq.cols();
  PISEG_CHECK(p.wq.rows() == embed_dim && p.wk.rows() == embed_dim && p.wv.rows() == embed_dim,
              "Image-SPM projections do not match embed_dim " << embed_dim);
  PISEG_CHECK(h >= 1 && p.wk.cols() == h && p.wv.cols() == h && p.wo.rows() == h &&
                  p.wo.cols() == 2 * embed_dim && p.bo.cols() == 2 * embed_dim && p.bq.cols() == h &&
                  p.bk.cols() == h && p.bv.cols() == h,
              "Image-SPM parameter shapes are inconsistent");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Mat image_spm_apply(const Mat& visual, const Mat& text_hat, const ImageSpmParams& params,
                    const Mat& z, ImageSpmCache* cache) {
  const Eigen::Index dim = visual.cols();
  PISEG_CHECK(text_hat.cols() == dim, "Image-SPM: text width " << text_hat.cols()
                                                               << " != visual width " << dim);
  PISEG_CHECK(text_hat.rows() >= 1, "Image-SPM needs at least one class row");
  check_image_params(params, dim);
  PISEG_CHECK(z.rows() == visual.rows() && z.cols() == dim, "Image-SPM noise must be P x C");

  ImageSpmCache local;
  ImageSpmCache& c = cache ? *cache : local;
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(params.hidden_dim()));

  c.cue = text_hat.colwise().mean();
  c.num_text_rows = text_hat.rows();
  c.query = visual * params.wq;
  c.query.rowwise() += params.bq.row(0);
  c.key = c.cue * params.wk + params.bk;
  c.value = c.cue * params.wv + params.bv;

  // A single key makes softmax attention constant; a sigmoid gate keeps the
  // per-position relevance to the cue.
  c.gate = ((c.query * c.key.transpose()) * inv_sqrt_h).col(0).unaryExpr(&sigmoid);
  c.hidden = c.query + c.gate * c.value;
  c.out = c.hidden * params.wo;
  c.out.rowwise() += params.bo.row(0);
  c.z = z;

  Mat out = visual + c.out.leftCols(dim) + c.out.rightCols(dim).cwiseAbs().cwiseProduct(z);
  return out;
}

Mat image_spm_backward(const Mat& grad_visual_hat, const Mat& visual, const ImageSpmParams& params,
                       const ImageSpmCache& c, ImageSpmParams& grads) {
  const Eigen::Index dim = visual.cols();
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(params.hidden_dim()));

  Mat grad_out(grad_visual_hat.rows(), 2 * dim);
  grad_out.leftCols(dim) = grad_visual_hat;
  grad_out.rightCols(dim) = grad_visual_hat.cwiseProduct(c.z).cwiseProduct(
      c.out.rightCols(dim).unaryExpr([](double x) { return sign(x); }));

  grads.wo.noalias() += c.hidden.transpose() * grad_out;
  grads.bo += grad_out.colwise().sum();
  const Mat grad_hidden = grad_out * params.wo.transpose();

  // hidden = q + gate * v, gate = sigmoid(q.k / sqrt(h))
  const Eigen::VectorXd grad_gate = grad_hidden * c.value.transpose();
  const Eigen::VectorXd grad_score =
      grad_gate.cwiseProduct(c.gate).cwiseProduct((1.0 - c.gate.array()).matrix()) * inv_sqrt_h;
  Mat grad_query = grad_hidden;
  grad_query.noalias() += grad_score * c.key;
  const Mat grad_key = grad_score.transpose() * c.query;
  const Mat grad_value = c.gate.transpose() * grad_hidden;

  grads.wq.noalias() += visual.transpose() * grad_query;
  grads.bq += grad_query.colwise().sum();
  grads.wk.noalias() += c.cue.transpose() * grad_key;
  grads.bk += grad_key;
  grads.wv.noalias() += c.cue.transpose() * grad_value;
  grads.bv += grad_value;

  const Mat grad_cue = grad_key * params.wk.transpose() + grad_value * params.wv.transpose();
  // cue is the mean over the text_hat rows
  Mat grad_text_hat(c.num_text_rows, dim);
  grad_text_hat.rowwise() = grad_cue.row(0) / static_cast<double>(c.num_text_rows);
  return grad_text_hat;
}

VisualFeatureMap image_spm_forward(const VisualFeatureMap& visual, const TextEmbedding& text_hat,
                                   const ImageSpmParams& params, const NoiseSpec& spec,
                                   SpmMode mode, Rng& rng) {
  check_pairing(text_hat, visual);
  check_image_params(params, visual.embed_dim());
  if (mode == SpmMode::kEval) return visual;
  const Mat z = sample_noise(spec, visual.tensor.rows(), visual.embed_dim(), rng);
  VisualFeatureMap out = visual;
  out.tensor = image_spm_apply(visual.tensor, text_hat.matrix, params, z);
  return out;
}

}  // namespace piseg
