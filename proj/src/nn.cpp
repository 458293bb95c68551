#include "mmfl/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "mmfl/error.hpp"
#include "mmfl/random.hpp"

namespace mmfl {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.size() != weight.cols()) {
    throw DimensionError("dense layer: weight " + shape_string(weight.shape()) + " with bias " +
                         shape_string(bias.shape()));
  }
}

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out) {
  return DenseLayer(Tensor({in, out}), Tensor({out}));
}

DenseLayer DenseLayer::glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer = zeros(in, out);
  for (double& w : layer.weight.storage()) w = uniform(rng, -limit, limit);
  return layer;
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != layer.in_dim()) {
    throw DimensionError("dense_forward: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(layer.weight.shape()));
  }
  Tensor y = matmul(x, layer.weight);
  const std::size_t out = layer.out_dim();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < out; ++c) row[c] += layer.bias[c];
  }
  return y;
}

DenseGrads dense_backward(const DenseLayer& layer, const Tensor& x, const Tensor& grad_out) {
  if (x.rank() != 2 || x.cols() != layer.in_dim()) {
    throw DimensionError("dense_backward: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(layer.weight.shape()));
  }
  if (grad_out.rank() != 2 || grad_out.rows() != x.rows() || grad_out.cols() != layer.out_dim()) {
    throw DimensionError("dense_backward: grad_out " + shape_string(grad_out.shape()) +
                         " vs expected [" + std::to_string(x.rows()) + " x " +
                         std::to_string(layer.out_dim()) + "]");
  }
  return DenseGrads{matmul_nt(grad_out, layer.weight), matmul_tn(x, grad_out),
                    column_sum(grad_out)};
}

// ---------------------------------------------------------------------------

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax-rows") return Activation::kSoftmaxRows;
  throw ConfigError("unknown activation kind '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmaxRows: return "softmax-rows";
  }
  throw ConfigError("unknown activation kind");
}

Tensor activation_forward(const Tensor& x, Activation kind) {
  Tensor y = x;
  switch (kind) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      for (double& v : y.storage()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::kSigmoid:
      for (double& v : y.storage()) v = sigmoid(v);
      break;
    case Activation::kSoftmaxRows: {
      if (x.rank() != 2) throw DimensionError("softmax-rows requires a rank-2 input");
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
          v = std::exp(v - m);
          total += v;
        }
        for (double& v : row) v /= total;
      }
      break;
    }
  }
  return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& grad_out, Activation kind) {
  require_same_shape(x, grad_out, "activation_backward");
  Tensor g = grad_out;
  switch (kind) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0.0)) g[i] = 0.0;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(x[i]);
        g[i] *= s * (1.0 - s);
      }
      break;
    case Activation::kSoftmaxRows: {
      const Tensor y = activation_forward(x, kind);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
        for (std::size_t c = 0; c < yr.size(); ++c) gr[c] = yr[c] * (gr[c] - dot);
      }
      break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor whitening_matrix(const Tensor& cov, double eps) { return whitening_matrix(cov, eps, nullptr, 0); }

Tensor whitening_matrix(const Tensor& cov, double eps, WhiteningSpectrum* spectrum, std::size_t group_size) {
  if (cov.rank() != 2 || cov.rows() != cov.cols()) {
    throw DimensionError("whitening_matrix: covariance must be square, got " +
                         shape_string(cov.shape()));
  }
  if (!(eps >= 0.0)) throw ValidationError("whitening_matrix: eps must be non-negative");
  cov.require_finite("whitening_matrix covariance");
  const std::size_t d = cov.rows();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-9) {
        throw ValidationError("whitening_matrix: covariance is not symmetric");
      }
  const std::size_t g = (group_size == 0 || group_size > d) ? d : group_size;

  if (spectrum != nullptr) {
    spectrum->eigenvalues = Tensor({d});
    spectrum->eigenvectors = Tensor({d, d});
    spectrum->group.assign(d, 0);
    spectrum->eps = eps;
  }
  Tensor out({d, d});
  for (std::size_t start = 0, block = 0; start < d; start += g, ++block) {
    const std::size_t n = std::min(g, d - start);
    const auto en = static_cast<Eigen::Index>(n);
    RowMatrix c(en, en);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            0.5 * (cov.at(start + i, start + j) + cov.at(start + j, start + i));
    Eigen::SelfAdjointEigenSolver<RowMatrix> solver(c);
    if (solver.info() != Eigen::Success) {
      throw NumericError("whitening_matrix: eigendecomposition failed");
    }
    Eigen::VectorXd scale = solver.eigenvalues();
    const auto& u = solver.eigenvectors();
    for (Eigen::Index j = 0; j < en; ++j) {
      // Rank-deficient batches produce tiny negative eigenvalues from rounding.
      const double clamped = std::max(scale(j), 0.0);
      const double lambda = clamped + eps;
      if (!(lambda > 0.0)) throw NumericError("whitening_matrix: singular covariance with eps = 0");
      scale(j) = 1.0 / std::sqrt(lambda);
      if (spectrum != nullptr) {
        const std::size_t col = start + static_cast<std::size_t>(j);
        spectrum->eigenvalues[col] = clamped;
        spectrum->group[col] = block;
        for (Eigen::Index i = 0; i < en; ++i)
          spectrum->eigenvectors.at(start + static_cast<std::size_t>(i), col) = u(i, j);
      }
    }
    RowMatrix w = u * scale.asDiagonal() * u.transpose();
    for (Eigen::Index i = 0; i < en; ++i)
      for (Eigen::Index j = 0; j < en; ++j)
        out.at(start + static_cast<std::size_t>(i), start + static_cast<std::size_t>(j)) =
            0.5 * (w(i, j) + w(j, i));
  }
  out.require_finite("whitening_matrix output");
  return out;
}

WhiteningState::WhiteningState(std::size_t dim, double eps_in, double momentum_in, std::size_t group)
    : gamma({dim}, 1.0),
      beta({dim}, 0.0),
      running_mean({dim}),
      running_cov({dim, dim}),
      eps(eps_in),
      momentum(momentum_in),
      group_size(group) {
  if (!(eps > 0.0)) throw ValidationError("whitening eps must be positive");
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw ValidationError("whitening momentum must lie in (0, 1]");
  }
}

void WhiteningState::reset_running_stats() {
  running_mean = Tensor({dim()});
  running_cov = Tensor::identity(dim());
  has_running_ = true;
}

void WhiteningState::clear_running_stats() {
  running_mean = Tensor({dim()});
  running_cov = Tensor({dim(), dim()});
  has_running_ = false;
}

void WhiteningState::set_running_stats(Tensor mean, Tensor cov) {
  if (mean.size() != dim() || cov.shape() != std::vector<std::size_t>{dim(), dim()}) {
    throw DimensionError("set_running_stats: statistics do not match layer width");
  }
  running_mean = std::move(mean);
  running_cov = std::move(cov);
  has_running_ = true;
}

void WhiteningState::update_running_stats(const BatchMoments& batch) {
  if (!has_running_) reset_running_stats();
  const double keep = 1.0 - momentum;
  for (std::size_t i = 0; i < running_mean.size(); ++i)
    running_mean[i] = keep * running_mean[i] + momentum * batch.mean[i];
  for (std::size_t i = 0; i < running_cov.size(); ++i)
    running_cov[i] = keep * running_cov[i] + momentum * batch.cov[i];
}

BatchMoments batch_moments(const Tensor& x) {
  Tensor mean = column_mean(x);
  Tensor cov = row_covariance(x, mean);
  return BatchMoments{std::move(mean), std::move(cov)};
}

WhiteningStats stats_from_moments(const BatchMoments& moments, double eps, WhiteningSpectrum* spectrum,
                                  std::size_t group_size) {
  return WhiteningStats{moments.mean, whitening_matrix(moments.cov, eps, spectrum, group_size)};
}

WhiteningStats running_whitening_stats(const WhiteningState& state) {
  if (!state.has_running_stats()) {
    throw StateError("batch whitening: eval mode requested before running statistics exist");
  }
  return WhiteningStats{state.running_mean,
                        whitening_matrix(state.running_cov, state.eps, nullptr, state.group_size)};
}

Tensor apply_whitening(const Tensor& x, const WhiteningStats& stats, const Tensor& gamma,
                       const Tensor& beta, Tensor* normalized) {
  const std::size_t d = gamma.size();
  if (x.rank() != 2 || x.cols() != d || stats.mean.size() != d || beta.size() != d) {
    throw DimensionError("batch whitening: input " + shape_string(x.shape()) +
                         " vs layer width " + std::to_string(d));
  }
  Tensor centered = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = centered.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] -= stats.mean[c];
  }
  Tensor x_hat = matmul_nt(centered, stats.whitening);
  Tensor y = x_hat;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] = gamma[c] * row[c] + beta[c];
  }
  if (normalized != nullptr) *normalized = std::move(x_hat);
  return y;
}

WhiteningGrads whitening_backward(const WhiteningCache& cache, const Tensor& gamma,
                                  const Tensor& grad_out) {
  require_same_shape(cache.normalized, grad_out, "batch_whitening_backward");
  const std::size_t d = gamma.size();
  Tensor scaled = grad_out;
  Tensor grad_gamma({d});
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    auto row = scaled.row(r);
    const auto x_hat = cache.normalized.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      grad_gamma[c] += row[c] * x_hat[c];
      row[c] *= gamma[c];
    }
  }
  // y_hat = (x - mean) W^T  =>  dx = dy_hat W
  return WhiteningGrads{matmul(scaled, cache.stats.whitening), std::move(grad_gamma),
                        column_sum(grad_out)};
}

WhiteningGrads whitening_backward_batch(const WhiteningCache& cache, const Tensor& gamma,
                                        const Tensor& grad_out) {
  if (!cache.spectrum) throw StateError("whitening_backward_batch: cache holds no batch spectrum");
  require_same_shape(cache.normalized, grad_out, "whitening_backward_batch");
  require_same_shape(cache.centered, grad_out, "whitening_backward_batch");
  const std::size_t d = gamma.size();
  const std::size_t b = grad_out.rows();
  const WhiteningSpectrum& sp = *cache.spectrum;

  WhiteningGrads out = whitening_backward(cache, gamma, grad_out);
  // Gradient w.r.t. x_hat, then w.r.t. W_B: G_W = sum_b g_b c_b^T.
  Tensor g_hat = grad_out;
  for (std::size_t r = 0; r < b; ++r) {
    auto row = g_hat.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] *= gamma[c];
  }
  const Tensor g_w = matmul_tn(g_hat, cache.centered);

  // W = f(cov) with f(l) = (l + eps)^-1/2; adjoint through the spectral
  // function via divided differences of f.
  const Tensor& u = sp.eigenvectors;
  const Tensor& lam = sp.eigenvalues;
  Tensor inner = matmul(matmul_tn(u, g_w), u);
  for (std::size_t i = 0; i < d; ++i) {
    const double fi = 1.0 / std::sqrt(lam[i] + sp.eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double fj = 1.0 / std::sqrt(lam[j] + sp.eps);
      const double gap = lam[i] - lam[j];
      double k;
      if (sp.group[i] != sp.group[j]) {
        k = 0.0;
      } else if (std::abs(gap) > 1e-9 * (std::abs(lam[i]) + std::abs(lam[j]) + sp.eps)) {
        k = (fi - fj) / gap;
      } else {
        k = -0.5 * fi * fi * fi;
      }
      inner.at(i, j) *= k;
    }
  }
  Tensor g_cov = matmul_nt(matmul(u, inner), u);
  // cov = (1/B) sum c c^T: dc_b = (G + G^T)/B c_b; the centering term
  // vanishes because the centered rows sum to zero.
  Tensor g_sym = g_cov;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) g_sym.at(i, j) = (g_cov.at(i, j) + g_cov.at(j, i)) / static_cast<double>(b);
  Tensor via_cov = matmul_nt(cache.centered, g_sym);

  // Mean path of the direct term: subtract the column mean of the gradient.
  const Tensor direct_mean = column_mean(out.grad_x);
  for (std::size_t r = 0; r < b; ++r) {
    auto row = out.grad_x.row(r);
    const auto extra = via_cov.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] += extra[c] - direct_mean[c];
  }
  return out;
}

Tensor batch_whitening_forward(const Tensor& x, WhiteningState& state, Mode mode) {
  if (x.rank() != 2 || x.cols() != state.dim()) {
    throw DimensionError("batch_whitening_forward: input " + shape_string(x.shape()) +
                         " vs layer width " + std::to_string(state.dim()));
  }
  WhiteningCache cache;
  if (mode == Mode::kTrain) {
    if (x.rows() < 2) {
      throw BatchSizeError("batch whitening in train mode needs at least 2 rows, got " +
                           std::to_string(x.rows()));
    }
    const BatchMoments moments = batch_moments(x);
    cache.stats = stats_from_moments(moments, state.eps, nullptr, state.group_size);
    state.update_running_stats(moments);
  } else {
    cache.stats = running_whitening_stats(state);
  }
  Tensor y = apply_whitening(x, cache.stats, state.gamma, state.beta, &cache.normalized);
  state.cache = std::move(cache);
  return y;
}

WhiteningGrads batch_whitening_backward(const WhiteningState& state, const Tensor& grad_out) {
  if (!state.cache) throw StateError("batch_whitening_backward: no forward cache");
  return whitening_backward(*state.cache, state.gamma, grad_out);
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_size(std::size_t n, const AdamConfig& cfg) {
  AdamState s;
  s.first_moment = Tensor({n});
  s.second_moment = Tensor({n});
  s.lr = cfg.lr;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps_opt = cfg.eps;
  s.weight_decay = cfg.weight_decay;
  return s;
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: params " + shape_string(params.shape()) + ", grads " +
                         shape_string(grads.shape()) + ", moments " +
                         shape_string(state.first_moment.shape()));
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    double& w = params[i];
    if (state.weight_decay != 0.0) w -= state.lr * state.weight_decay * w;
    w -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps_opt);
  }
}

// ---------------------------------------------------------------------------

Tensor numeric_gradient(const ScalarFunction& f, const Tensor& theta, double h) {
  if (!(h > 0.0)) throw ValidationError("numeric_gradient: step must be positive");
  Tensor probe = theta;
  Tensor grad(theta.shape());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const double up = f(probe);
    probe[j] = orig - h;
    const double down = f(probe);
    probe[j] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: function returned a non-finite value");
    }
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

double grad_check(const ScalarFunction& f, const Tensor& analytic, const Tensor& theta, double h) {
  if (analytic.size() != theta.size()) {
    throw DimensionError("grad_check: analytic gradient length differs from theta");
  }
  const Tensor numeric = numeric_gradient(f, theta, h);
  double worst = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double a = analytic[j];
    const double n = numeric[j];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace mmfl
