#include "mmfl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mmfl/error.hpp"

namespace mmfl {

namespace {

constexpr double kProbClamp = 1e-12;
constexpr double kNormFloor = 1e-12;

double l2norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

NtxentVariant parse_ntxent_variant(std::string_view name) {
  if (name == "paper-literal") return NtxentVariant::kPaperLiteral;
  if (name == "standard") return NtxentVariant::kStandard;
  throw ConfigError("unknown ntxent_variant '" + std::string(name) +
                    "' (expected paper-literal or standard)");
}

const char* ntxent_variant_name(NtxentVariant v) {
  return v == NtxentVariant::kPaperLiteral ? "paper-literal" : "standard";
}

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
  if (!(lambda_mim >= 0.0) || !std::isfinite(lambda_mim)) {
    throw ConfigError("lambda_mim must be a non-negative finite number");
  }
}

LossResult bce_multilabel(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape() || probs.rank() != 2) {
    throw DimensionError("bce_multilabel: probs " + shape_string(probs.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  }
  const std::size_t b = probs.rows();
  if (b == 0) throw BatchSizeError("bce_multilabel: empty batch");
  double total = 0.0;
  Tensor grad(probs.shape());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    const double y = targets[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    grad[i] = (probs[i] - y) * inv_b;
  }
  return LossResult{total * inv_b, std::move(grad)};
}

LossResult ce_singlelabel(const Tensor& probs, std::span<const std::size_t> classes) {
  if (probs.rank() != 2 || probs.rows() != classes.size()) {
    throw DimensionError("ce_singlelabel: probs " + shape_string(probs.shape()) + " with " +
                         std::to_string(classes.size()) + " class indices");
  }
  const std::size_t b = probs.rows();
  if (b == 0) throw BatchSizeError("ce_singlelabel: empty batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  Tensor grad = probs;
  for (std::size_t r = 0; r < b; ++r) {
    if (classes[r] >= probs.cols()) {
      throw DimensionError("ce_singlelabel: class index " + std::to_string(classes[r]) +
                           " out of range for " + std::to_string(probs.cols()) + " classes");
    }
    total -= std::log(std::max(probs.at(r, classes[r]), kProbClamp));
    grad.at(r, classes[r]) -= 1.0;
  }
  scale_inplace(grad, inv_b);
  return LossResult{total * inv_b, std::move(grad)};
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  std::vector<std::size_t> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

LossResult classification_loss(const Tensor& probs, const Tensor& targets, TaskKind task) {
  if (task == TaskKind::kMultiLabel) return bce_multilabel(probs, targets);
  if (targets.shape() != probs.shape()) {
    throw DimensionError("classification_loss: probs " + shape_string(probs.shape()) +
                         " vs one-hot targets " + shape_string(targets.shape()));
  }
  const auto classes = argmax_rows(targets);
  return ce_singlelabel(probs, classes);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: vector lengths differ");
  const double na = l2norm(a);
  const double nb = l2norm(b);
  if (na < kNormFloor || nb < kNormFloor) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

NtxentResult ntxent_with_global_grad(const Tensor& f_local, const Tensor& f_global,
                                     const LossConfig& cfg) {
  cfg.validate();
  if (f_local.rank() != 2 || f_local.shape() != f_global.shape()) {
    throw DimensionError("ntxent: local " + shape_string(f_local.shape()) + " vs global " +
                         shape_string(f_global.shape()));
  }
  const std::size_t b = f_local.rows();
  const std::size_t d = f_local.cols();
  if (b < 2) throw BatchSizeError("ntxent: batch of " + std::to_string(b) + " has no negatives");
  const bool literal = cfg.variant == NtxentVariant::kPaperLiteral;

  std::vector<double> norm_a(b), norm_b(b);
  for (std::size_t i = 0; i < b; ++i) {
    norm_a[i] = l2norm(f_local.row(i));
    norm_b[i] = l2norm(f_global.row(i));
  }
  // sim(z, t) = S(local_z, global_t); zero when either norm is degenerate.
  Tensor sim = matmul_nt(f_local, f_global);
  for (std::size_t z = 0; z < b; ++z)
    for (std::size_t t = 0; t < b; ++t) {
      const double denom = norm_a[z] * norm_b[t];
      sim.at(z, t) = (norm_a[z] < kNormFloor || norm_b[t] < kNormFloor)
                         ? 0.0
                         : std::clamp(sim.at(z, t) / denom, -1.0, 1.0);
    }

  // dL/dS(z, t), built row by row from a softmax over the denominator set.
  Tensor g_sim({b, b});
  double loss = 0.0;
  for (std::size_t z = 0; z < b; ++z) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < b; ++t)
      if (!(literal && t == z)) m = std::max(m, sim.at(z, t) / cfg.tau);
    double denom = 0.0;
    for (std::size_t t = 0; t < b; ++t)
      if (!(literal && t == z)) denom += std::exp(sim.at(z, t) / cfg.tau - m);
    const double log_denom = m + std::log(denom);
    loss += log_denom - sim.at(z, z) / cfg.tau;
    for (std::size_t t = 0; t < b; ++t) {
      double g = (literal && t == z) ? 0.0 : std::exp(sim.at(z, t) / cfg.tau - log_denom);
      if (t == z) g -= 1.0;
      g_sim.at(z, t) = g / cfg.tau;
    }
  }

  Tensor grad_a({b, d});
  Tensor grad_b({b, d});
  for (std::size_t z = 0; z < b; ++z) {
    if (norm_a[z] < kNormFloor) continue;
    const auto az = f_local.row(z);
    for (std::size_t t = 0; t < b; ++t) {
      if (norm_b[t] < kNormFloor) continue;
      const double g = g_sim.at(z, t);
      if (g == 0.0) continue;
      const auto bt = f_global.row(t);
      const double s = sim.at(z, t);
      const double inv_ab = 1.0 / (norm_a[z] * norm_b[t]);
      const double sa = s / (norm_a[z] * norm_a[z]);
      const double sb = s / (norm_b[t] * norm_b[t]);
      auto ga = grad_a.row(z);
      auto gb = grad_b.row(t);
      for (std::size_t k = 0; k < d; ++k) {
        ga[k] += g * (bt[k] * inv_ab - sa * az[k]);
        gb[k] += g * (az[k] * inv_ab - sb * bt[k]);
      }
    }
  }
  return NtxentResult{loss, std::move(grad_a), std::move(grad_b)};
}

LossResult ntxent(const Tensor& f_local, const Tensor& f_global, const LossConfig& cfg) {
  NtxentResult r = ntxent_with_global_grad(f_local, f_global, cfg);
  return LossResult{r.loss, std::move(r.grad_local)};
}

LocalObjectiveResult local_objective(const Tensor& x, const Tensor& targets, const Encoder& local,
                                     std::size_t slot, const TaskHead& head,
                                     const GlobalModelSet& global, const LossConfig& cfg,
                                     const ObjectiveStats* frozen) {
  cfg.validate();
  const std::size_t p = global.topology.modalities();
  if (slot >= p || local.modality_id != slot) {
    throw DimensionError("local_objective: slot " + std::to_string(slot) +
                         " does not match encoder modality " + std::to_string(local.modality_id));
  }
  if (x.rows() == 0) throw BatchSizeError("local_objective: empty batch");
  const bool use_mim = cfg.lambda_mim > 0.0 && p > 1;
  if (use_mim && x.rows() < 2) {
    throw BatchSizeError("local_objective: NT-Xent needs a batch of at least 2");
  }

  LocalObjectiveResult out;
  out.grad_encoder = zeros_like(local);
  out.grad_head = zeros_like(head);

  const Tensor features =
      encode(local, x, Mode::kTrain, &out.trace, frozen != nullptr ? &frozen->local : nullptr);
  out.stats.local = trace_stats(out.trace);
  const Tensor fused = fuse(features, slot, p);
  const Tensor logits = head_logits(head, fused);
  const Prediction pred = probabilities_from_logits(logits, head.task);
  LossResult ce = classification_loss(pred.probabilities, targets, head.task);
  out.ce = ce.loss;

  DenseGrads head_grads = dense_backward(head.layer, fused, ce.grad_logits);
  out.grad_head.layer.weight = std::move(head_grads.grad_weight);
  out.grad_head.layer.bias = std::move(head_grads.grad_bias);
  const std::size_t df = features.cols();
  Tensor grad_features = slice_cols(head_grads.grad_x, slot * df, (slot + 1) * df);

  Tensor grad_adapter_out({x.rows(), local.hidden_dim()});
  if (use_mim) {
    std::vector<CrossTrace> cross_traces;
    Tensor f_global({x.rows(), df});
    std::size_t k = 0;
    for (std::size_t o = 0; o < p; ++o) {
      if (o == slot) continue;
      CrossTrace ct;
      const FrozenStats* pinned =
          frozen != nullptr && k < frozen->cross.size() ? &frozen->cross[k] : nullptr;
      Tensor f = cross_encode(local, global.encoders[o], x, Mode::kTrain, &ct, pinned);
      out.stats.cross.push_back(trace_stats(ct.body));
      add_inplace(f_global, f);
      cross_traces.push_back(std::move(ct));
      ++k;
    }
    const double share = 1.0 / static_cast<double>(p - 1);
    scale_inplace(f_global, share);

    // Per-sample scale, like the classification term.
    const double weight = cfg.lambda_mim / static_cast<double>(x.rows());
    NtxentResult ntx = ntxent_with_global_grad(features, f_global, cfg);
    out.ntx = ntx.loss / static_cast<double>(x.rows());
    scale_inplace(ntx.grad_local, weight);
    add_inplace(grad_features, ntx.grad_local);
    scale_inplace(ntx.grad_global, weight * share);
    k = 0;
    for (std::size_t o = 0; o < p; ++o) {
      if (o == slot) continue;
      add_inplace(grad_adapter_out,
                  cross_encode_backward_to_adapter(global.encoders[o], cross_traces[k], ntx.grad_global));
      ++k;
    }
  }

  add_inplace(grad_adapter_out, body_backward(local, out.trace.body, grad_features, &out.grad_encoder));
  adapter_backward(local, out.trace, grad_adapter_out, &out.grad_encoder);
  out.loss = use_mim ? cfg.lambda_mim * out.ntx + out.ce : out.ce;
  return out;
}

}  // namespace mmfl
