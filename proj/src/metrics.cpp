#include "mmfl/metrics.hpp"

#include <algorithm>

#include "mmfl/error.hpp"
#include "mmfl/losses.hpp"

namespace mmfl {

namespace {

void require_match(const Tensor& preds, const Tensor& labels, const char* op) {
  if (preds.shape() != labels.shape() || preds.rank() != 2) {
    throw DimensionError(std::string(op) + ": preds " + shape_string(preds.shape()) + " vs labels " +
                         shape_string(labels.shape()));
  }
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

std::vector<Counts> per_label_counts(const Tensor& preds, const Tensor& labels) {
  std::vector<Counts> c(preds.cols());
  for (std::size_t r = 0; r < preds.rows(); ++r)
    for (std::size_t l = 0; l < preds.cols(); ++l) {
      const bool p = preds.at(r, l) > 0.5;
      const bool y = labels.at(r, l) > 0.5;
      if (p && y) ++c[l].tp;
      else if (p) ++c[l].fp;
      else if (y) ++c[l].fn;
      else ++c[l].tn;
    }
  return c;
}

}  // namespace

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double micro_f1(const Tensor& preds, const Tensor& labels) {
  require_match(preds, labels, "micro_f1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const Counts& c : per_label_counts(preds, labels)) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  return f1_from_counts(tp, fp, fn);
}

double macro_f1(const Tensor& preds, const Tensor& labels) {
  require_match(preds, labels, "macro_f1");
  const auto counts = per_label_counts(preds, labels);
  if (counts.empty()) return 0.0;
  double total = 0.0;
  for (const Counts& c : counts) total += f1_from_counts(c.tp, c.fp, c.fn);
  return total / static_cast<double>(counts.size());
}

Tensor decide(const Tensor& probabilities, TaskKind task) {
  Tensor out(probabilities.shape());
  if (task == TaskKind::kMultiLabel) {
    for (std::size_t i = 0; i < probabilities.size(); ++i) out[i] = probabilities[i] >= 0.5 ? 1.0 : 0.0;
  } else {
    const auto best = argmax_rows(probabilities);
    for (std::size_t r = 0; r < best.size(); ++r) out.at(r, best[r]) = 1.0;
  }
  return out;
}

MetricsReport compute_metrics(const Tensor& probabilities, const Tensor& labels, TaskKind task) {
  const Tensor preds = decide(probabilities, task);
  require_match(preds, labels, "compute_metrics");
  MetricsReport rep;
  rep.samples = preds.rows();
  const auto counts = per_label_counts(preds, labels);
  double macro = 0.0;
  std::size_t correct_cells = 0;
  for (const Counts& c : counts) {
    rep.true_positives += c.tp;
    rep.false_positives += c.fp;
    rep.false_negatives += c.fn;
    correct_cells += c.tp + c.tn;
    rep.precision.push_back(c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
    rep.recall.push_back(c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
    macro += f1_from_counts(c.tp, c.fp, c.fn);
  }
  rep.micro_f1 = f1_from_counts(rep.true_positives, rep.false_positives, rep.false_negatives);
  rep.macro_f1 = counts.empty() ? 0.0 : macro / static_cast<double>(counts.size());
  if (rep.samples > 0) {
    if (task == TaskKind::kMultiLabel) {
      rep.accuracy = static_cast<double>(correct_cells) / static_cast<double>(preds.size());
    } else {
      rep.accuracy = static_cast<double>(rep.true_positives) / static_cast<double>(rep.samples);
    }
  }
  return rep;
}

}  // namespace mmfl
