#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "mmfl/tensor.hpp"

namespace mmfl {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Dense layer: y = x * W + b with W stored [in x out].

struct DenseLayer {
  Tensor weight;
  Tensor bias;

  DenseLayer() = default;
  DenseLayer(Tensor w, Tensor b);

  static DenseLayer zeros(std::size_t in, std::size_t out);
  // Glorot-uniform weights, zero bias.
  static DenseLayer glorot(std::size_t in, std::size_t out, std::mt19937_64& rng);

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  bool operator==(const DenseLayer&) const = default;
};

struct DenseGrads {
  Tensor grad_x;
  Tensor grad_weight;
  Tensor grad_bias;
};

Tensor dense_forward(const DenseLayer& layer, const Tensor& x);
DenseGrads dense_backward(const DenseLayer& layer, const Tensor& x, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Elementwise / row-wise activations.

enum class Activation { kIdentity, kRelu, kSigmoid, kSoftmaxRows };

// Accepts "identity", "relu", "sigmoid", "softmax-rows"; anything else is a ConfigError.
Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

Tensor activation_forward(const Tensor& x, Activation kind);
// Jacobian-vector product at input `x`.
Tensor activation_backward(const Tensor& x, const Tensor& grad_out, Activation kind);

double sigmoid(double v);

// ---------------------------------------------------------------------------
// Batch whitening (ZCA) with learnable affine output.

// W_B = U diag((lambda + eps)^-1/2) U^T for cov = U diag(lambda) U^T.
Tensor whitening_matrix(const Tensor& cov, double eps);

// W_B together with the eigendecomposition it was built from.
struct WhiteningSpectrum {
  Tensor eigenvalues;   // [d], ascending within each group, clamped at 0
  Tensor eigenvectors;  // [d x d], column j pairs with eigenvalue j
  std::vector<std::size_t> group;  // group of eigenpair j
  double eps = 0.0;
};

// group_size 0 (or d) whitens all d features jointly; otherwise features are
// split into consecutive groups of group_size (the last may be shorter) and
// W_B is block diagonal.
Tensor whitening_matrix(const Tensor& cov, double eps, WhiteningSpectrum* spectrum,
                        std::size_t group_size = 0);

// Statistics a whitening pass normalizes with.
struct WhiteningStats {
  Tensor mean;       // [d]
  Tensor whitening;  // [d x d]
};

struct BatchMoments {
  Tensor mean;  // [d]
  Tensor cov;   // [d x d], divisor B
};

struct WhiteningCache {
  WhiteningStats stats;
  Tensor normalized;  // x_hat = (x - mean) W_B^T, [B x d]
  // Present when the statistics came from this very batch; the backward
  // pass then differentiates through the mean and covariance.
  std::optional<WhiteningSpectrum> spectrum;
  Tensor centered;  // x - mean, kept with the spectrum
};

class WhiteningState {
 public:
  WhiteningState() = default;
  explicit WhiteningState(std::size_t dim, double eps = 1e-5, double momentum = 0.1,
                          std::size_t group_size = 0);

  std::size_t dim() const { return gamma.size(); }
  bool has_running_stats() const { return has_running_; }
  // Running estimates become mean 0, covariance I.
  void reset_running_stats();
  void clear_running_stats();
  void set_running_stats(Tensor mean, Tensor cov);
  // EMA toward the given batch moments; initializes from (0, I) when empty.
  void update_running_stats(const BatchMoments& batch);

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_cov;
  double eps = 1e-5;
  double momentum = 0.1;
  std::size_t group_size = 0;  // 0: whiten all features jointly
  std::optional<WhiteningCache> cache;

  bool operator==(const WhiteningState& o) const {
    return gamma == o.gamma && beta == o.beta && running_mean == o.running_mean &&
           running_cov == o.running_cov && eps == o.eps && momentum == o.momentum &&
           group_size == o.group_size &&
           has_running_ == o.has_running_;
  }

 private:
  bool has_running_ = false;
};

struct WhiteningGrads {
  Tensor grad_x;
  Tensor grad_gamma;
  Tensor grad_beta;
};

BatchMoments batch_moments(const Tensor& x);
WhiteningStats stats_from_moments(const BatchMoments& moments, double eps,
                                  WhiteningSpectrum* spectrum = nullptr, std::size_t group_size = 0);
// Statistics eval mode uses; StateError when no running estimates exist.
WhiteningStats running_whitening_stats(const WhiteningState& state);

// Pure transform: gamma * ((x - mean) W_B^T) + beta.
Tensor apply_whitening(const Tensor& x, const WhiteningStats& stats, const Tensor& gamma,
                       const Tensor& beta, Tensor* normalized = nullptr);
// Gradient with the statistics held constant.
WhiteningGrads whitening_backward(const WhiteningCache& cache, const Tensor& gamma,
                                  const Tensor& grad_out);
// Gradient of the train-mode transform including the dependence of the
// batch mean and W_B on x. Needs cache.spectrum.
WhiteningGrads whitening_backward_batch(const WhiteningCache& cache, const Tensor& gamma,
                                        const Tensor& grad_out);

// Train mode normalizes with batch statistics and updates the running EMA;
// eval mode uses the running estimates. Both populate state.cache.
Tensor batch_whitening_forward(const Tensor& x, WhiteningState& state, Mode mode);
WhiteningGrads batch_whitening_backward(const WhiteningState& state, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Adam with optional decoupled weight decay.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  double weight_decay = 0.0;

  static AdamState for_size(std::size_t n, const AdamConfig& cfg);

  bool operator==(const AdamState&) const = default;
};

void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

using ScalarFunction = std::function<double(const Tensor&)>;

// Central-difference gradient of f at theta.
Tensor numeric_gradient(const ScalarFunction& f, const Tensor& theta, double h);

// Max over components of |a - n| / max(|a|, |n|, 1e-8), where n is the
// central-difference estimate. NumericError on non-finite f.
double grad_check(const ScalarFunction& f, const Tensor& analytic, const Tensor& theta, double h);

}  // namespace mmfl
