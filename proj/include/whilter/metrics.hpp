#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "whilter/error.hpp"

namespace whilter {

/// Scores for one class with their ground truth.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<bool> labels;
  std::string class_name;

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true)); }
  std::size_t negatives() const { return labels.size() - positives(); }
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// A score at or above `threshold` counts as a positive prediction.
inline ConfusionCounts confusion_counts(const ScoredSet& s, double threshold) {
  if (s.scores.size() != s.labels.size()) throw DataError("confusion_counts: scores/labels length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool predicted = s.scores[i] >= threshold;
    if (s.labels[i]) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

inline double false_positive_rate(const ConfusionCounts& c) {
  return c.fp + c.tn == 0 ? 0.0 : static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
}

inline double false_negative_rate(const ConfusionCounts& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.fn) / static_cast<double>(c.tp + c.fn);
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators yield 0 for the affected quantity.
inline PrecisionRecall precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecall out;
  if (c.tp + c.fp > 0) out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

/// One threshold on the ROC sweep.
struct OperatingPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
};

/// Operating points at every distinct score, in increasing threshold order,
/// followed by a point just above the maximum score where nothing is
/// predicted positive. Equal scores share one point.
inline std::vector<OperatingPoint> roc_sweep(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size()) throw DataError("roc_sweep: scores/labels length mismatch");
  const std::size_t n_pos = s.positives();
  const std::size_t n_neg = s.negatives();
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("EER undefined for class '" + s.class_name + "': needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // Sweep upwards: samples strictly below the threshold are predicted negative.
  std::vector<OperatingPoint> points;
  std::size_t neg_below = 0, pos_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = s.scores[order[i]];
    points.push_back({t, static_cast<double>(n_neg - neg_below) / n_neg, static_cast<double>(pos_below) / n_pos});
    while (i < order.size() && s.scores[order[i]] == t) {
      s.labels[order[i]] ? ++pos_below : ++neg_below;
      ++i;
    }
  }
  const double top = s.scores[order.back()];
  points.push_back({std::nextafter(top, std::numeric_limits<double>::infinity()), 0.0, 1.0});
  return points;
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Equal error rate by linear interpolation between the two adjacent
/// operating points where FPR - FNR changes sign.
inline EerResult equal_error_rate(const ScoredSet& s) {
  const auto points = roc_sweep(s);
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto& a = points[k];
    const auto& b = points[k + 1];
    const double da = a.fpr - a.fnr;
    const double db = b.fpr - b.fnr;
    if (da == 0.0) return {a.fpr, a.threshold};
    if (da > 0.0 && db <= 0.0) {
      const double alpha = da / (da - db);
      return {a.fpr + alpha * (b.fpr - a.fpr), a.threshold + alpha * (b.threshold - a.threshold)};
    }
  }
  // FPR - FNR ends at -1 so the loop always returns; kept for completeness.
  return {points.back().fpr, points.back().threshold};
}

}  // namespace whilter
