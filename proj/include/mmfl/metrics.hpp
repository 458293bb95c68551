#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmfl/models.hpp"
#include "mmfl/tensor.hpp"

namespace mmfl {

struct MetricsReport {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<double> precision;  // per label
  std::vector<double> recall;     // per label
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t samples = 0;
};

// F1 from pooled counts; 0 when there are no positives and no predictions.
double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

// preds/labels are 0/1 matrices [N x L].
double micro_f1(const Tensor& preds, const Tensor& labels);
// Unweighted mean of per-label F1; a label with no positives and no
// predictions contributes 0.
double macro_f1(const Tensor& preds, const Tensor& labels);

// Multi-label: threshold 0.5. Single-label: one-hot of the row argmax.
Tensor decide(const Tensor& probabilities, TaskKind task);

// Multi-label accuracy is the fraction of correct label decisions;
// single-label accuracy is the fraction of correctly classified rows.
MetricsReport compute_metrics(const Tensor& probabilities, const Tensor& labels, TaskKind task);

}  // namespace mmfl
