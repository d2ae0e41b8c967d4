#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "whilter/manifest.hpp"
#include "whilter/rng.hpp"

namespace whilter {

inline constexpr std::size_t kSamplesPerEpoch = 15000;
inline constexpr std::size_t kBatchSize = 64;

/// Class-balancing weights: w_c = (#negative) / (#positive).
struct SamplerWeights {
  std::array<double, kNumClasses> class_weight{};
  std::vector<std::string> warnings;

  /// 1 + sum of w_c over the classes the entry is positive for.
  double sample_weight(const LabelVector& y) const {
    double w = 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (y.flags[c]) w += class_weight[c];
    return w;
  }
};

inline SamplerWeights compute_class_weights(std::span<const ManifestEntry> entries) {
  if (entries.empty()) throw DataError("compute_class_weights: no entries");
  SamplerWeights out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t pos = 0;
    for (const auto& e : entries) pos += e.labels.flags[c] ? 1 : 0;
    const std::size_t neg = entries.size() - pos;
    const std::string name(kClassNames[c]);
    if (pos == 0) {
      out.class_weight[c] = 0.0;
      out.warnings.push_back("class '" + name + "' has no positive examples; it cannot be learned");
    } else if (neg == 0) {
      out.class_weight[c] = 0.0;
      out.warnings.push_back("class '" + name + "' has no negative examples");
    } else {
      out.class_weight[c] = static_cast<double>(neg) / static_cast<double>(pos);
    }
  }
  return out;
}

/// Draws `n` indices with replacement, P(i) proportional to weights[i].
inline std::vector<std::size_t> weighted_draw(std::span<const double> weights, Rng& rng, std::size_t n) {
  if (weights.empty()) throw DataError("weighted_draw: no entries");
  std::vector<double> cumulative(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw DataError("weighted_draw: negative weight");
    total += weights[i];
    cumulative[i] = total;
  }
  if (total <= 0.0) throw DataError("weighted_draw: all weights are zero");
  std::vector<std::size_t> out(n);
  for (auto& idx : out) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                            static_cast<std::ptrdiff_t>(weights.size()) - 1));
  }
  return out;
}

/// One epoch's worth of entry indices drawn by per-sample weight.
inline std::vector<std::size_t> sample_epoch(std::span<const ManifestEntry> entries, const SamplerWeights& weights,
                                             Rng& rng, std::size_t n = kSamplesPerEpoch) {
  std::vector<double> w(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) w[i] = weights.sample_weight(entries[i].labels);
  return weighted_draw(w, rng, n);
}

/// Splits drawn indices into batches in draw order. The trailing partial
/// batch is kept, so 15000 draws at 64 give 235 iterations (the last one 24).
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    out.emplace_back(indices.begin() + start, indices.begin() + end);
  }
  return out;
}

}  // namespace whilter
