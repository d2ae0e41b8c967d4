#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "whilter/audio.hpp"
#include "whilter/fft.hpp"
#include "whilter/rng.hpp"

namespace whilter {

/// Fine-tuning augmentations, each applied independently with its own probability.
struct AugmentConfig {
  double p_speed = 0.2;
  double p_freq_drop = 0.2;
  double p_frame_drop = 0.2;
  double p_bit_reduce = 0.2;
  double p_sign_flip = 0.2;
  double max_drop_band_hz = 1000.0;

  static AugmentConfig disabled() { return {0.0, 0.0, 0.0, 0.0, 0.0, 1000.0}; }
};

/// Removes [lo_hz, hi_hz] from the spectrum of the whole signal.
inline Waveform frequency_drop(const Waveform& w, double lo_hz, double hi_hz) {
  const std::size_t n = w.samples.size();
  if (n == 0) return w;
  const std::size_t size = fft::next_pow2(n);
  std::vector<std::complex<double>> buf(size);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {w.samples[i], 0.0};
  fft::transform(buf);
  const double bin_hz = static_cast<double>(w.sample_rate) / static_cast<double>(size);
  const auto lo = static_cast<std::size_t>(std::ceil(lo_hz / bin_hz));
  const auto hi = std::min<std::size_t>(static_cast<std::size_t>(std::floor(hi_hz / bin_hz)), size / 2);
  for (std::size_t k = lo; k <= hi; ++k) {
    buf[k] = 0.0;
    if (k != 0 && k != size / 2) buf[size - k] = 0.0;
  }
  fft::transform(buf, true);
  Waveform out = w;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(buf[i].real());
  return out;
}

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Zeroes the given sample ranges (clipped to the signal).
inline Waveform frame_drop(const Waveform& w, std::span<const Segment> segments) {
  Waveform out = w;
  for (const auto& s : segments) {
    const std::size_t end = std::min(out.samples.size(), s.start + s.length);
    for (std::size_t i = std::min(s.start, end); i < end; ++i) out.samples[i] = 0.0f;
  }
  return out;
}

/// Rounds to a signed `bits`-bit grid over [-1, 1): step 2^(1 - bits).
inline Waveform quantize_bits(const Waveform& w, int bits) {
  const double levels = std::ldexp(1.0, bits - 1);
  Waveform out = w;
  for (auto& s : out.samples) s = static_cast<float>(std::round(static_cast<double>(s) * levels) / levels);
  return out;
}

inline Waveform sign_flip(const Waveform& w) {
  Waveform out = w;
  for (auto& s : out.samples) s = -s;
  return out;
}

/// Linear-interpolation resampling by `factor` (> 1 is faster), then
/// padded or truncated back to the input length.
inline Waveform speed_perturb(const Waveform& w, double factor) {
  const std::size_t n = w.samples.size();
  if (n == 0) return w;
  const auto out_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) / factor)));
  Waveform resampled;
  resampled.sample_rate = w.sample_rate;
  resampled.source_path = w.source_path;
  resampled.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto j = static_cast<std::size_t>(pos);
    if (j + 1 >= n) {
      resampled.samples[i] = j < n ? w.samples[j] : 0.0f;
      continue;
    }
    const double frac = pos - static_cast<double>(j);
    resampled.samples[i] = static_cast<float>(w.samples[j] * (1.0 - frac) + w.samples[j + 1] * frac);
  }
  return pad_or_truncate(resampled, n);
}

/// Applies speed perturbation, frequency drop, frame drop, bit-resolution
/// reduction and sign flip in that order, each with its own probability.
/// Each stage draws one uniform for the decision, then its parameters if applied.
inline Waveform augment(const Waveform& w, Rng& rng, const AugmentConfig& config = {}) {
  Waveform out = w;
  if (rng.bernoulli(config.p_speed)) {
    out = speed_perturb(out, rng.bernoulli(0.5) ? 0.9 : 1.1);
  }
  if (rng.bernoulli(config.p_freq_drop)) {
    const double nyquist = out.sample_rate / 2.0;
    const double width = rng.uniform(0.1, 1.0) * config.max_drop_band_hz;
    const double lo = rng.uniform(0.0, std::max(0.0, nyquist - width));
    out = frequency_drop(out, lo, lo + width);
  }
  if (rng.bernoulli(config.p_frame_drop)) {
    const auto count = rng.integer(1, 3);
    std::vector<Segment> segs;
    for (std::int64_t i = 0; i < count; ++i) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.050, 0.200) * out.sample_rate);
      const std::size_t slack = out.samples.size() > len ? out.samples.size() - len : 0;
      segs.push_back({static_cast<std::size_t>(rng.index(slack + 1)), len});
    }
    out = frame_drop(out, segs);
  }
  if (rng.bernoulli(config.p_bit_reduce)) {
    out = quantize_bits(out, static_cast<int>(rng.integer(8, 14)));
  }
  if (rng.bernoulli(config.p_sign_flip)) {
    out = sign_flip(out);
  }
  return out;
}

}  // namespace whilter
