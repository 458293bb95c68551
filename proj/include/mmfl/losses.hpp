#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mmfl/models.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

// kPaperLiteral keeps only negatives in the softmax denominator;
// kStandard is the usual SimCLR form that also includes the positive.
enum class NtxentVariant { kPaperLiteral, kStandard };

NtxentVariant parse_ntxent_variant(std::string_view name);
const char* ntxent_variant_name(NtxentVariant v);

struct LossConfig {
  double tau = 0.5;
  double lambda_mim = 1.0;
  NtxentVariant variant = NtxentVariant::kPaperLiteral;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

// Mean over rows of the summed per-label binary cross-entropy.
// Probabilities are clamped to [1e-12, 1 - 1e-12].
LossResult bce_multilabel(const Tensor& probs, const Tensor& targets);
// Mean negative log-probability of the true class.
LossResult ce_singlelabel(const Tensor& probs, std::span<const std::size_t> classes);

// Row-wise argmax of a one-hot (or score) matrix.
std::vector<std::size_t> argmax_rows(const Tensor& x);

// Dispatches on task kind; for single-label tasks `targets` is one-hot.
LossResult classification_loss(const Tensor& probs, const Tensor& targets, TaskKind task);

// Cosine similarity; 0 when either vector has norm below 1e-12.
double cosine(std::span<const double> a, std::span<const double> b);

struct NtxentResult {
  double loss = 0.0;
  Tensor grad_local;
  Tensor grad_global;
};

// Rows of f_local and f_global are paired by index. Summed over the batch.
// The returned gradient is wrt f_local only; f_global is a constant.
LossResult ntxent(const Tensor& f_local, const Tensor& f_global, const LossConfig& cfg);
// As above, additionally returning the gradient wrt f_global for callers
// that backpropagate through the path that produced it.
NtxentResult ntxent_with_global_grad(const Tensor& f_local, const Tensor& f_global,
                                     const LossConfig& cfg);

// Whitening statistics used by one local_objective evaluation: the local
// encoder's, then one set per cross-encoded other modality (ascending id).
struct ObjectiveStats {
  FrozenStats local;
  std::vector<FrozenStats> cross;
};

struct LocalObjectiveResult {
  double loss = 0.0;  // lambda * ntx + ce
  double ce = 0.0;
  double ntx = 0.0;   // NT-Xent per sample (batch sum / B), 0 when MIM is inactive
  Encoder grad_encoder;
  TaskHead grad_head;
  EncoderTrace trace;   // local encoder forward, for running-statistic updates
  ObjectiveStats stats;
};

// Classification loss on the zero-padded fused features plus lambda times the
// per-sample NT-Xent between the local features and the cross-encoded
// features of every other modality's global encoder (averaged). Gradients
// reach the local encoder (including through the cross-encoded path's
// adapter) and the head; global encoders are read-only. `frozen` pins
// whitening statistics for finite-difference checks.
LocalObjectiveResult local_objective(const Tensor& x, const Tensor& targets, const Encoder& local,
                                     std::size_t slot, const TaskHead& head,
                                     const GlobalModelSet& global, const LossConfig& cfg,
                                     const ObjectiveStats* frozen = nullptr);

}  // namespace mmfl
