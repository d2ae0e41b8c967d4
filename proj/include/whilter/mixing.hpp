#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "whilter/audio.hpp"
#include "whilter/error.hpp"
#include "whilter/manifest.hpp"
#include "whilter/rng.hpp"

namespace whilter {

inline constexpr double kMinMixRms = 1e-6;

/// Resolves a manifest entry to audio; the default reads the WAV at audio_path.
using AudioLoader = std::function<Waveform(const ManifestEntry&)>;

inline AudioLoader wav_loader() {
  return [](const ManifestEntry& e) { return load_audio(e.audio_path); };
}

/// Fits `x` to exactly `n` samples: shorter input is tiled, longer input is
/// cropped at a random offset (or at the head when `rng` is null).
inline std::vector<float> fit_length(std::span<const float> x, std::size_t n, Rng* rng) {
  if (x.empty()) throw DataError("fit_length: empty signal");
  std::vector<float> out(n);
  if (x.size() >= n) {
    const std::size_t slack = x.size() - n;
    const std::size_t offset = rng && slack > 0 ? static_cast<std::size_t>(rng->index(slack + 1)) : 0;
    std::copy_n(x.begin() + offset, n, out.begin());
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i % x.size()];
  }
  return out;
}

struct MixResult {
  Waveform mixture;
  double gain = 1.0;        // applied to the interferer before summing
  double peak_scale = 1.0;  // applied to the whole mixture afterwards
  // Scaled components; filled only when requested.
  std::vector<float> target_part;
  std::vector<float> interferer_part;
};

/// output = peak_scale * (target + gain * interferer) with
/// gain = rms(target) / rms(interferer) * 10^(-snr_db / 20). The mixture is
/// rescaled only when its peak exceeds 1.
inline MixResult mix_at_snr(const Waveform& target, const Waveform& interferer, double snr_db,
                            bool keep_components = false, Rng* rng = nullptr) {
  const double target_rms = rms(target.samples);
  if (target_rms <= kMinMixRms) throw DataError("mix_at_snr: silent target " + target.source_path);
  std::vector<float> other = interferer.samples.size() == target.samples.size()
                                 ? interferer.samples
                                 : fit_length(interferer.samples, target.samples.size(), rng);
  const double other_rms = rms(other);
  if (other_rms <= kMinMixRms) throw DataError("mix_at_snr: silent interferer " + interferer.source_path);

  MixResult res;
  res.gain = target_rms / other_rms * std::pow(10.0, -snr_db / 20.0);
  const std::size_t n = target.samples.size();
  std::vector<double> mixed(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mixed[i] = static_cast<double>(target.samples[i]) + res.gain * other[i];
    peak = std::max(peak, std::abs(mixed[i]));
  }
  if (peak > 1.0) res.peak_scale = 1.0 / peak;
  res.mixture.sample_rate = target.sample_rate;
  res.mixture.source_path = target.source_path;
  res.mixture.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.mixture.samples[i] = static_cast<float>(mixed[i] * res.peak_scale);
  if (keep_components) {
    res.target_part.resize(n);
    res.interferer_part.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      res.target_part[i] = static_cast<float>(target.samples[i] * res.peak_scale);
      res.interferer_part[i] = static_cast<float>(res.gain * other[i] * res.peak_scale);
    }
  }
  return res;
}

/// SNR in dB measured from retained components.
inline double component_snr_db(std::span<const float> target_part, std::span<const float> interferer_part) {
  return 20.0 * std::log10(rms(target_part) / rms(interferer_part));
}

/// Interferer pools for dynamic mixing. Items must carry their pool's label.
struct MixPools {
  std::vector<ManifestEntry> english_speech;
  std::vector<ManifestEntry> foreign_speech;
  std::vector<ManifestEntry> synthetic_speech;
  std::vector<ManifestEntry> music;
  std::vector<ManifestEntry> noise;
};

enum class MixFamily { speech, noise, music };

struct MixConfig {
  double fraction = 0.25;
  double snr_min_db = -5.0;
  double snr_max_db = 10.0;
  // Relative draw weights english : foreign : synthetic for speech mixes.
  std::array<double, 3> speech_proportions = {2.0, 1.0, 1.0};
  bool mix_speech = true;
  bool mix_noise = true;
  bool mix_music = true;
};

/// Throws if a pool item lacks the label its pool implies.
inline void validate_pools(const MixPools& pools) {
  auto check = [](const std::vector<ManifestEntry>& pool, const char* pool_name, auto&& ok) {
    for (const auto& e : pool) {
      if (!ok(e.labels)) throw DataError(std::string(pool_name) + " pool item has inconsistent labels: " + e.audio_path);
    }
  };
  check(pools.english_speech, "english_speech",
        [](const LabelVector& y) { return !y[ClassId::foreign] && !y[ClassId::synthetic]; });
  check(pools.foreign_speech, "foreign_speech", [](const LabelVector& y) { return y[ClassId::foreign]; });
  check(pools.synthetic_speech, "synthetic_speech", [](const LabelVector& y) { return y[ClassId::synthetic]; });
  check(pools.music, "music", [](const LabelVector& y) { return y[ClassId::music]; });
  check(pools.noise, "noise", [](const LabelVector& y) { return y[ClassId::noise]; });
}

struct MixSample {
  Waveform audio;
  LabelVector labels;
};

/// What dynamic_mix did to one batch item.
struct MixRecord {
  std::size_t batch_index = 0;
  MixFamily family = MixFamily::speech;
  std::string interferer_path;
  double snr_db = 0.0;
  double realized_snr_db = 0.0;  // measured from the retained components
};

/// Boolean labels OR together; speaker counts add.
inline LabelVector compose_labels(const LabelVector& base, const LabelVector& added, int added_speakers) {
  LabelVector out = base;
  for (std::size_t c = 0; c < kNumClasses; ++c) out.flags[c] = base.flags[c] || added.flags[c];
  const int speakers = base.speakers_or_default() + added_speakers;
  out.num_speakers = speakers;
  out[ClassId::multispeaker] = speakers > 1;
  return out;
}

/// Mixes a random quarter of the batch with speech, independently another
/// quarter with noise and another with music, at SNRs drawn uniformly from
/// [snr_min_db, snr_max_db). Labels are recomposed per mixed item.
///
/// RNG draw order: for each family (speech, noise, music): the item
/// selection (partial Fisher-Yates), then per selected item: speech pool
/// choice (speech only), pool item, crop offset (if the interferer is longer),
/// SNR.
inline void dynamic_mix(std::vector<MixSample>& batch, const MixPools& pools, const AudioLoader& loader, Rng& rng,
                        const MixConfig& config = {}, std::vector<MixRecord>* records = nullptr) {
  if (batch.size() < 4) throw ConfigError("dynamic_mix: batch size must be >= 4");
  const std::size_t count = static_cast<std::size_t>(std::floor(config.fraction * static_cast<double>(batch.size())));

  auto pick_items = [&]() {
    std::vector<std::size_t> idx(batch.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
  };

  auto run_family = [&](MixFamily family) {
    const std::vector<ManifestEntry>* speech_pools[3] = {&pools.english_speech, &pools.foreign_speech,
                                                         &pools.synthetic_speech};
    if (family == MixFamily::speech) {
      const auto& prop = config.speech_proportions;
      if (!(prop[0] >= 0.0 && prop[1] >= 0.0 && prop[2] >= 0.0 && prop[0] + prop[1] + prop[2] > 0.0)) {
        throw ConfigError("dynamic_mix: speech proportions must be non-negative with a positive sum");
      }
      for (std::size_t k = 0; k < 3; ++k) {
        if (config.speech_proportions[k] > 0.0 && speech_pools[k]->empty()) {
          throw DataError("dynamic_mix: speech pool " + std::to_string(k) + " is empty but has nonzero proportion");
        }
      }
    } else if ((family == MixFamily::noise ? pools.noise : pools.music).empty()) {
      throw DataError(std::string("dynamic_mix: empty ") + (family == MixFamily::noise ? "noise" : "music") + " pool");
    }
    for (std::size_t b : pick_items()) {
      const std::vector<ManifestEntry>* pool = nullptr;
      if (family == MixFamily::speech) {
        const double total = config.speech_proportions[0] + config.speech_proportions[1] + config.speech_proportions[2];
        double u = rng.uniform() * total;
        std::size_t k = 0;
        while (k < 2 && u >= config.speech_proportions[k]) u -= config.speech_proportions[k++];
        while (config.speech_proportions[k] <= 0.0) k = (k + 1) % 3;
        pool = speech_pools[k];
      } else {
        pool = family == MixFamily::noise ? &pools.noise : &pools.music;
      }
      const ManifestEntry& item = (*pool)[rng.index(pool->size())];
      Waveform other = loader(item);
      other.source_path = item.audio_path;
      if (other.samples.size() > batch[b].audio.samples.size()) {
        other.samples = fit_length(other.samples, batch[b].audio.samples.size(), &rng);
      }
      const double snr = rng.uniform(config.snr_min_db, config.snr_max_db);
      MixResult mixed = mix_at_snr(batch[b].audio, other, snr, records != nullptr);
      const int added_speakers =
          family == MixFamily::speech ? item.labels.speakers_or_default() : item.labels.num_speakers.value_or(0);
      batch[b].labels = compose_labels(batch[b].labels, item.labels, added_speakers);
      batch[b].audio = std::move(mixed.mixture);
      if (records) {
        records->push_back({b, family, item.audio_path, snr,
                            component_snr_db(mixed.target_part, mixed.interferer_part)});
      }
    }
  };

  if (config.mix_speech) run_family(MixFamily::speech);
  if (config.mix_noise) run_family(MixFamily::noise);
  if (config.mix_music) run_family(MixFamily::music);
}

}  // namespace whilter
