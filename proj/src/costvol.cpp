#include "piseg/costvol.hpp"

#include <cmath>
#include <random>

namespace piseg {

namespace {

Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m = Mat::Zero(rows, cols);
  if (stddev == 0.0) return m;
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mat zeros(const Mat& like) { return Mat::Zero(like.rows(), like.cols()); }

Mat unit_rows(const Mat& m, double eps, Eigen::VectorXd& norms) {
  norms = m.rowwise().norm();
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(i) / std::max(norms[i], eps);
  return out;
}

Mat unit_rows_backward(const Mat& grad_unit, const Mat& unit, const Eigen::VectorXd& norms, double eps) {
  Mat grad(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    if (norms[i] > eps) {
      grad.row(i) = (grad_unit.row(i) - unit.row(i) * unit.row(i).dot(grad_unit.row(i))) / norms[i];
    } else {
      grad.row(i) = grad_unit.row(i) / eps;
    }
  }
  return grad;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void AggregatorConfig::validate() const {
  PISEG_CHECK(num_blocks >= 0, "num_blocks must be >= 0");
  PISEG_CHECK(feature_dim >= 1, "feature_dim must be >= 1");
  PISEG_CHECK(window >= 1 && window % 2 == 1, "aggregation window must be a positive odd integer, got " << window);
}

// ---- cost construction -----------------------------------------------------

Mat cost_volume_apply(const Mat& visual_hat, const Mat& text_hat, double eps, CostCache* cache) {
  PISEG_CHECK(visual_hat.cols() == text_hat.cols(),
              "cost volume: visual width " << visual_hat.cols() << " != text width " << text_hat.cols());
  PISEG_CHECK(eps > 0.0, "cosine eps must be positive");
  CostCache local;
  CostCache& c = cache ? *cache : local;
  c.eps = eps;
  c.visual_unit = unit_rows(visual_hat, eps, c.visual_norm);
  c.text_unit = unit_rows(text_hat, eps, c.text_norm);
  Mat cost = c.visual_unit * c.text_unit.transpose();
  return cost;
}

void cost_volume_backward(const Mat& grad_cost, const CostCache& c, Mat* grad_visual_hat,
                          Mat* grad_text_hat) {
  if (grad_visual_hat) {
    const Mat grad_unit = grad_cost * c.text_unit;
    *grad_visual_hat = unit_rows_backward(grad_unit, c.visual_unit, c.visual_norm, c.eps);
  }
  if (grad_text_hat) {
    const Mat grad_unit = grad_cost.transpose() * c.visual_unit;
    *grad_text_hat = unit_rows_backward(grad_unit, c.text_unit, c.text_norm, c.eps);
  }
}

CostVolume build_cost_volume(const VisualFeatureMap& visual_hat, const TextEmbedding& text_hat, double eps) {
  check_pairing(text_hat, visual_hat);
  CostVolume out;
  out.grid = visual_hat.grid;
  out.tensor = cost_volume_apply(visual_hat.tensor, text_hat.matrix, eps);
  return out;
}

// ---- cost embedding --------------------------------------------------------

void CostEmbedParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

CostFeatureVolume embed_cost(const CostVolume& cost, const CostEmbedParams& params) {
  PISEG_CHECK(cost.tensor.allFinite(), "cost volume contains non-finite values");
  PISEG_CHECK(params.weight.rows() == 1 && params.bias.rows() == 1 &&
                  params.weight.cols() == params.bias.cols(),
              "cost embedding weight/bias must be 1 x D");
  PISEG_CHECK(cost.tensor.rows() == cost.grid.area(), "cost volume rows do not match its grid");
  const Eigen::Map<const Eigen::VectorXd> flat(cost.tensor.data(), cost.tensor.size());
  CostFeatureVolume out;
  out.grid = cost.grid;
  out.num_classes = cost.num_classes();
  out.tensor = flat * params.weight;
  out.tensor.rowwise() += params.bias.row(0);
  return out;
}

void embed_cost_backward(const Mat& grad_features, const CostVolume& cost, const CostEmbedParams& params,
                         CostEmbedParams& grads, Mat* grad_cost) {
  const Eigen::Map<const Eigen::VectorXd> flat(cost.tensor.data(), cost.tensor.size());
  grads.weight.noalias() += flat.transpose() * grad_features;
  grads.bias += grad_features.colwise().sum();
  if (grad_cost) {
    const Eigen::VectorXd g = grad_features * params.weight.transpose();
    *grad_cost = Eigen::Map<const Mat>(g.data(), cost.tensor.rows(), cost.tensor.cols());
  }
}

// ---- aggregation -----------------------------------------------------------

void AttentionParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  out.push_back({prefix + "wq", &wq});
  out.push_back({prefix + "bq", &bq});
  out.push_back({prefix + "wk", &wk});
  out.push_back({prefix + "bk", &bk});
  out.push_back({prefix + "wv", &wv});
  out.push_back({prefix + "bv", &bv});
  out.push_back({prefix + "wo", &wo});
  out.push_back({prefix + "bo", &bo});
}

void AggregationBlockParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  spatial.collect(out, prefix + "spatial.");
  out.push_back({prefix + "spatial.relative_bias", &relative_bias});
  classwise.collect(out, prefix + "class.");
}

namespace {

AttentionParams init_attention(int dim, Rng& rng, bool zero_residual) {
  const double std_proj = 1.0 / std::sqrt(static_cast<double>(dim));
  AttentionParams p;
  p.wq = normal_matrix(dim, dim, std_proj, rng);
  p.wk = normal_matrix(dim, dim, std_proj, rng);
  p.wv = normal_matrix(dim, dim, std_proj, rng);
  p.wo = normal_matrix(dim, dim, zero_residual ? 0.0 : std_proj, rng);
  p.bq = Mat::Zero(1, dim);
  p.bk = Mat::Zero(1, dim);
  p.bv = Mat::Zero(1, dim);
  p.bo = Mat::Zero(1, dim);
  return p;
}

AttentionParams zeros_like(const AttentionParams& p) {
  return {zeros(p.wq), zeros(p.bq), zeros(p.wk), zeros(p.bk),
          zeros(p.wv), zeros(p.bv), zeros(p.wo), zeros(p.bo)};
}

void project(const Mat& x, const AttentionParams& p, AttentionCache& c) {
  c.input = x;
  c.query = x * p.wq;
  c.query.rowwise() += p.bq.row(0);
  c.key = x * p.wk;
  c.key.rowwise() += p.bk.row(0);
  c.value = x * p.wv;
  c.value.rowwise() += p.bv.row(0);
}

Mat finish(const Mat& x, const AttentionParams& p, const AttentionCache& c) {
  Mat y = x;
  y.noalias() += c.mixed * p.wo;
  y.rowwise() += p.bo.row(0);
  return y;
}

// Output projection and residual; returns dL/d(mixed). grad_input starts as
// the residual path.
Mat finish_backward(const Mat& grad_y, const AttentionParams& p, const AttentionCache& c,
                    AttentionParams& g) {
  g.wo.noalias() += c.mixed.transpose() * grad_y;
  g.bo += grad_y.colwise().sum();
  return grad_y * p.wo.transpose();
}

void project_backward(const Mat& grad_q, const Mat& grad_k, const Mat& grad_v, const AttentionParams& p,
                      const AttentionCache& c, AttentionParams& g, Mat& grad_input) {
  g.wq.noalias() += c.input.transpose() * grad_q;
  g.bq += grad_q.colwise().sum();
  g.wk.noalias() += c.input.transpose() * grad_k;
  g.bk += grad_k.colwise().sum();
  g.wv.noalias() += c.input.transpose() * grad_v;
  g.bv += grad_v.colwise().sum();
  grad_input.noalias() += grad_q * p.wq.transpose();
  grad_input.noalias() += grad_k * p.wk.transpose();
  grad_input.noalias() += grad_v * p.wv.transpose();
}

Mat spatial_mix(const Mat& x, GridSize grid, int classes, int window, const AttentionParams& p,
                const Mat& bias, AttentionCache& c) {
  project(x, p, c);
  const int radius = window / 2;
  const int taps = window * window;
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  c.weights = Mat::Zero(x.rows(), taps);
  c.mixed = Mat::Zero(x.rows(), x.cols());
  std::vector<double> scores(taps);
  std::vector<Eigen::Index> rows(taps);
  for (int y = 0; y < grid.height; ++y) {
    for (int xx = 0; xx < grid.width; ++xx) {
      for (int n = 0; n < classes; ++n) {
        const Eigen::Index t = (static_cast<Eigen::Index>(y) * grid.width + xx) * classes + n;
        double max_score = -std::numeric_limits<double>::infinity();
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const int j = (dy + radius) * window + (dx + radius);
            const int ny = y + dy;
            const int nx = xx + dx;
            if (ny < 0 || ny >= grid.height || nx < 0 || nx >= grid.width) {
              rows[j] = -1;
              continue;
            }
            rows[j] = (static_cast<Eigen::Index>(ny) * grid.width + nx) * classes + n;
            scores[j] = c.query.row(t).dot(c.key.row(rows[j])) * scale + bias(0, j);
            max_score = std::max(max_score, scores[j]);
          }
        }
        double total = 0.0;
        for (int j = 0; j < taps; ++j) {
          if (rows[j] < 0) continue;
          const double e = std::exp(scores[j] - max_score);
          c.weights(t, j) = e;
          total += e;
        }
        for (int j = 0; j < taps; ++j) {
          if (rows[j] < 0) continue;
          c.weights(t, j) /= total;
          c.mixed.row(t).noalias() += c.weights(t, j) * c.value.row(rows[j]);
        }
      }
    }
  }
  return finish(x, p, c);
}

Mat spatial_mix_backward(const Mat& grad_y, GridSize grid, int classes, int window, const AttentionParams& p,
                         const AttentionCache& c, AttentionParams& g, Mat& grad_bias) {
  Mat grad_input = grad_y;
  const Mat grad_mixed = finish_backward(grad_y, p, c, g);
  const int radius = window / 2;
  const int taps = window * window;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.input.cols()));
  Mat grad_q = Mat::Zero(c.query.rows(), c.query.cols());
  Mat grad_k = Mat::Zero(c.key.rows(), c.key.cols());
  Mat grad_v = Mat::Zero(c.value.rows(), c.value.cols());
  std::vector<double> grad_w(taps);
  std::vector<Eigen::Index> rows(taps);
  for (int y = 0; y < grid.height; ++y) {
    for (int xx = 0; xx < grid.width; ++xx) {
      for (int n = 0; n < classes; ++n) {
        const Eigen::Index t = (static_cast<Eigen::Index>(y) * grid.width + xx) * classes + n;
        double weighted = 0.0;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const int j = (dy + radius) * window + (dx + radius);
            const int ny = y + dy;
            const int nx = xx + dx;
            if (ny < 0 || ny >= grid.height || nx < 0 || nx >= grid.width) {
              rows[j] = -1;
              continue;
            }
            rows[j] = (static_cast<Eigen::Index>(ny) * grid.width + nx) * classes + n;
            grad_w[j] = grad_mixed.row(t).dot(c.value.row(rows[j]));
            weighted += grad_w[j] * c.weights(t, j);
            grad_v.row(rows[j]).noalias() += c.weights(t, j) * grad_mixed.row(t);
          }
        }
        for (int j = 0; j < taps; ++j) {
          if (rows[j] < 0) continue;
          const double grad_score = c.weights(t, j) * (grad_w[j] - weighted);
          grad_bias(0, j) += grad_score;
          grad_q.row(t).noalias() += (grad_score * scale) * c.key.row(rows[j]);
          grad_k.row(rows[j]).noalias() += (grad_score * scale) * c.query.row(t);
        }
      }
    }
  }
  project_backward(grad_q, grad_k, grad_v, p, c, g, grad_input);
  return grad_input;
}

Mat class_mix(const Mat& x, int classes, const AttentionParams& p, AttentionCache& c) {
  project(x, p, c);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const Eigen::Index positions = x.rows() / classes;
  c.weights.resize(x.rows(), classes);
  c.mixed.resize(x.rows(), x.cols());
  for (Eigen::Index pos = 0; pos < positions; ++pos) {
    const Eigen::Index r0 = pos * classes;
    Mat s = (c.query.middleRows(r0, classes) * c.key.middleRows(r0, classes).transpose()) * scale;
    for (Eigen::Index i = 0; i < classes; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp().matrix();
      s.row(i) /= s.row(i).sum();
    }
    c.weights.middleRows(r0, classes) = s;
    c.mixed.middleRows(r0, classes).noalias() = s * c.value.middleRows(r0, classes);
  }
  return finish(x, p, c);
}

Mat class_mix_backward(const Mat& grad_y, int classes, const AttentionParams& p, const AttentionCache& c,
                       AttentionParams& g) {
  Mat grad_input = grad_y;
  const Mat grad_mixed = finish_backward(grad_y, p, c, g);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.input.cols()));
  const Eigen::Index positions = c.input.rows() / classes;
  Mat grad_q(c.query.rows(), c.query.cols());
  Mat grad_k(c.key.rows(), c.key.cols());
  Mat grad_v(c.value.rows(), c.value.cols());
  for (Eigen::Index pos = 0; pos < positions; ++pos) {
    const Eigen::Index r0 = pos * classes;
    const auto w = c.weights.middleRows(r0, classes);
    const auto gm = grad_mixed.middleRows(r0, classes);
    const Mat grad_w = gm * c.value.middleRows(r0, classes).transpose();
    const Eigen::VectorXd inner = grad_w.cwiseProduct(w).rowwise().sum();
    Mat grad_s = w.cwiseProduct(grad_w - inner.replicate(1, classes)) * scale;
    grad_q.middleRows(r0, classes).noalias() = grad_s * c.key.middleRows(r0, classes);
    grad_k.middleRows(r0, classes).noalias() = grad_s.transpose() * c.query.middleRows(r0, classes);
    grad_v.middleRows(r0, classes).noalias() = w.transpose() * gm;
  }
  project_backward(grad_q, grad_k, grad_v, p, c, g, grad_input);
  return grad_input;
}

void check_features(const CostFeatureVolume& f) {
  PISEG_CHECK(f.num_classes >= 1, "feature volume has no classes");
  PISEG_CHECK(f.tensor.rows() == static_cast<Eigen::Index>(f.grid.area()) * f.num_classes,
              "feature volume rows do not match grid x classes");
}

}  // namespace

std::vector<AggregationBlockParams> init_aggregator(const AggregatorConfig& config, Rng& rng,
                                                    bool zero_residual) {
  config.validate();
  std::vector<AggregationBlockParams> blocks(static_cast<size_t>(config.num_blocks));
  for (auto& b : blocks) {
    b.spatial = init_attention(config.feature_dim, rng, zero_residual);
    b.relative_bias = Mat::Zero(1, config.window * config.window);
    b.classwise = init_attention(config.feature_dim, rng, zero_residual);
  }
  return blocks;
}

CostFeatureVolume aggregate(const CostFeatureVolume& features, const AggregatorConfig& config,
                            const std::vector<AggregationBlockParams>& blocks, AggregationCache* cache) {
  config.validate();
  check_features(features);
  PISEG_CHECK(static_cast<int>(blocks.size()) == config.num_blocks,
              "aggregator has " << blocks.size() << " blocks, config expects " << config.num_blocks);
  PISEG_CHECK(config.num_blocks == 0 || features.feature_dim() == config.feature_dim,
              "feature dim " << features.feature_dim() << " != configured " << config.feature_dim);
  PISEG_CHECK(config.num_blocks == 0 ||
                  (config.window <= features.grid.height && config.window <= features.grid.width),
              "aggregation window " << config.window << " exceeds grid " << features.grid.height << "x"
                                    << features.grid.width);

  AggregationCache local;
  AggregationCache& c = cache ? *cache : local;
  c.spatial.assign(blocks.size(), {});
  c.classwise.assign(blocks.size(), {});

  CostFeatureVolume out = features;
  for (size_t b = 0; b < blocks.size(); ++b) {
    out.tensor = spatial_mix(out.tensor, out.grid, out.num_classes, config.window, blocks[b].spatial,
                             blocks[b].relative_bias, c.spatial[b]);
    out.tensor = class_mix(out.tensor, out.num_classes, blocks[b].classwise, c.classwise[b]);
  }
  return out;
}

Mat aggregate_backward(const Mat& grad_output, const CostFeatureVolume& input_shape,
                       const AggregatorConfig& config, const std::vector<AggregationBlockParams>& blocks,
                       const AggregationCache& cache, std::vector<AggregationBlockParams>& grads) {
  if (grads.size() != blocks.size()) {
    grads.clear();
    for (const auto& b : blocks) {
      grads.push_back({zeros_like(b.spatial), zeros(b.relative_bias), zeros_like(b.classwise)});
    }
  }
  Mat grad = grad_output;
  for (size_t i = blocks.size(); i-- > 0;) {
    grad = class_mix_backward(grad, input_shape.num_classes, blocks[i].classwise, cache.classwise[i],
                              grads[i].classwise);
    grad = spatial_mix_backward(grad, input_shape.grid, input_shape.num_classes, config.window,
                                blocks[i].spatial, cache.spatial[i], grads[i].spatial,
                                grads[i].relative_bias);
  }
  return grad;
}

// ---- decoding --------------------------------------------------------------

void DecoderParams::collect(std::vector<NamedTensor>& out, const std::string& prefix) {
  for (size_t s = 0; s < stages.size(); ++s) {
    out.push_back({prefix + "stage" + std::to_string(s) + ".weight", &stages[s].weight});
    out.push_back({prefix + "stage" + std::to_string(s) + ".bias", &stages[s].bias});
  }
  out.push_back({prefix + "head.weight", &head_weight});
  out.push_back({prefix + "head.bias", &head_bias});
}

DecoderParams init_decoder(int feature_dim, int num_stages, Rng& rng) {
  PISEG_CHECK(feature_dim >= 1 && num_stages >= 0, "invalid decoder shape");
  DecoderParams p;
  const double conv_std = std::sqrt(2.0 / feature_dim);
  for (int s = 0; s < num_stages; ++s) {
    p.stages.push_back({normal_matrix(feature_dim, feature_dim, conv_std, rng), Mat::Zero(1, feature_dim)});
  }
  p.head_weight = normal_matrix(feature_dim, 1, 1.0 / std::sqrt(static_cast<double>(feature_dim)), rng);
  p.head_bias = Mat::Zero(1, 1);
  return p;
}

namespace {

struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-center bilinear sampling positions along one axis.
Taps axis_taps(int from, int to) {
  Taps t;
  t.lo.resize(to);
  t.hi.resize(to);
  t.frac.resize(to);
  const double ratio = static_cast<double>(from) / to;
  for (int i = 0; i < to; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > from - 1) lo = from - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, from - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

}  // namespace

Mat resize_tokens(const Mat& tokens, GridSize from, GridSize to, int num_classes) {
  PISEG_CHECK(tokens.rows() == static_cast<Eigen::Index>(from.area()) * num_classes,
              "token count does not match grid");
  if (from == to) return tokens;
  const Taps ty = axis_taps(from.height, to.height);
  const Taps tx = axis_taps(from.width, to.width);
  Mat out(static_cast<Eigen::Index>(to.area()) * num_classes, tokens.cols());
  auto block = [&](const Mat& m, int y, int x, int w) {
    return m.middleRows((static_cast<Eigen::Index>(y) * w + x) * num_classes, num_classes);
  };
  for (int y = 0; y < to.height; ++y) {
    const double fy = ty.frac[y];
    for (int x = 0; x < to.width; ++x) {
      const double fx = tx.frac[x];
      out.middleRows((static_cast<Eigen::Index>(y) * to.width + x) * num_classes, num_classes) =
          (1 - fy) * (1 - fx) * block(tokens, ty.lo[y], tx.lo[x], from.width) +
          (1 - fy) * fx * block(tokens, ty.lo[y], tx.hi[x], from.width) +
          fy * (1 - fx) * block(tokens, ty.hi[y], tx.lo[x], from.width) +
          fy * fx * block(tokens, ty.hi[y], tx.hi[x], from.width);
    }
  }
  return out;
}

Mat resize_tokens_backward(const Mat& grad_out, GridSize from, GridSize to, int num_classes) {
  if (from == to) return grad_out;
  const Taps ty = axis_taps(from.height, to.height);
  const Taps tx = axis_taps(from.width, to.width);
  Mat grad = Mat::Zero(static_cast<Eigen::Index>(from.area()) * num_classes, grad_out.cols());
  auto block = [&](int y, int x) {
    return grad.middleRows((static_cast<Eigen::Index>(y) * from.width + x) * num_classes, num_classes);
  };
  for (int y = 0; y < to.height; ++y) {
    const double fy = ty.frac[y];
    for (int x = 0; x < to.width; ++x) {
      const double fx = tx.frac[x];
      const auto g = grad_out.middleRows((static_cast<Eigen::Index>(y) * to.width + x) * num_classes,
                                         num_classes);
      block(ty.lo[y], tx.lo[x]) += (1 - fy) * (1 - fx) * g;
      block(ty.lo[y], tx.hi[x]) += (1 - fy) * fx * g;
      block(ty.hi[y], tx.lo[x]) += fy * (1 - fx) * g;
      block(ty.hi[y], tx.hi[x]) += fy * fx * g;
    }
  }
  return grad;
}

Logits decode(const CostFeatureVolume& features, GridSize target, const DecoderParams& params,
              DecoderCache* cache) {
  check_features(features);
  PISEG_CHECK(target.height >= features.grid.height && target.width >= features.grid.width,
              "decode target " << target.height << "x" << target.width << " is smaller than grid "
                               << features.grid.height << "x" << features.grid.width);
  PISEG_CHECK(params.head_weight.rows() == features.feature_dim() && params.head_weight.cols() == 1,
              "decoder head does not match feature dim " << features.feature_dim());

  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  c.grids.clear();
  c.upsampled.clear();
  c.preactivation.clear();
  c.target = target;
  c.num_classes = features.num_classes;

  const int classes = features.num_classes;
  Mat current = features.tensor;
  GridSize grid = features.grid;
  for (const auto& stage : params.stages) {
    if (grid.height * 2 >= target.height && grid.width * 2 >= target.width) break;
    const GridSize next{grid.height * 2, grid.width * 2};
    c.grids.push_back(grid);
    c.upsampled.push_back(resize_tokens(current, grid, next, classes));
    Mat z = c.upsampled.back() * stage.weight;
    z.rowwise() += stage.bias.row(0);
    current = z.unaryExpr([](double v) { return v * sigmoid(v); });
    c.preactivation.push_back(std::move(z));
    grid = next;
  }
  c.grids.push_back(grid);
  c.resized = resize_tokens(current, grid, target, classes);

  Eigen::VectorXd flat = c.resized * params.head_weight.col(0);
  flat.array() += params.head_bias(0, 0);
  Logits out;
  out.size = target;
  out.tensor = Eigen::Map<const Mat>(flat.data(), target.area(), classes);
  return out;
}

Mat decode_backward(const Mat& grad_logits, const DecoderParams& params, const DecoderCache& c,
                    DecoderParams& grads) {
  const Eigen::Map<const Eigen::VectorXd> flat(grad_logits.data(), grad_logits.size());
  grads.head_weight.noalias() += c.resized.transpose() * flat;
  grads.head_bias(0, 0) += flat.sum();
  Mat grad = flat * params.head_weight.transpose();
  grad = resize_tokens_backward(grad, c.grids.back(), c.target, c.num_classes);
  for (size_t s = c.preactivation.size(); s-- > 0;) {
    const Mat& z = c.preactivation[s];
    const Mat grad_z = grad.cwiseProduct(z.unaryExpr([](double v) {
      const double sg = sigmoid(v);
      return sg * (1.0 + v * (1.0 - sg));
    }));
    grads.stages[s].weight.noalias() += c.upsampled[s].transpose() * grad_z;
    grads.stages[s].bias += grad_z.colwise().sum();
    const Mat grad_up = grad_z * params.stages[s].weight.transpose();
    grad = resize_tokens_backward(grad_up, c.grids[s], c.grids[s + 1], c.num_classes);
  }
  return grad;
}

// ---- readout ---------------------------------------------------------------

SegmentationMap predict(const Logits& logits) {
  PISEG_CHECK(logits.num_classes() >= 1, "logits have no classes");
  SegmentationMap map(logits.size.height, logits.size.width);
  for (Eigen::Index i = 0; i < logits.tensor.rows(); ++i) {
    int best = 0;
    double best_value = logits.tensor(i, 0);
    for (int n = 1; n < logits.num_classes(); ++n) {
      if (logits.tensor(i, n) > best_value) {
        best_value = logits.tensor(i, n);
        best = n;
      }
    }
    map.labels[static_cast<size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return map;
}

}  // namespace piseg
