#pragma once

// Synthetic five-class corpus for smoke tests and demos. Every class leaves a
// mark in its own part of the spectrum (bands of 1 kHz at 16 kHz):
//
//   speech        harmonic bursts hopping between 0-1 kHz and 1-2 kHz, one
//                 band at a time per speaker, so two speakers co-activate both
//   foreign       extra formant energy at 2-3 kHz while speaking
//   music         sustained tones at 3-5 kHz
//   noise         band-limited noise at 5-7 kHz
//   synthetic     periodic 7.5 kHz bursts

#include <cmath>
#include <complex>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "whilter/audio.hpp"
#include "whilter/fft.hpp"
#include "whilter/manifest.hpp"
#include "whilter/mixing.hpp"
#include "whilter/rng.hpp"

namespace whilter {

struct ToyConfig {
  std::size_t samples = 16000;
  int sample_rate = kSampleRate;
  double class_rate = 0.3;  // independent positive rate per class
  double floor_rms = 1e-3;  // background hiss present in every clip
};

namespace synth {

inline void add_sine(std::vector<double>& x, double freq, double amp, double phase, int sr, std::size_t from,
                     std::size_t to) {
  const double w = 2.0 * std::numbers::pi * freq / sr;
  for (std::size_t i = from; i < std::min(to, x.size()); ++i) x[i] += amp * std::sin(w * static_cast<double>(i) + phase);
}

/// One talker: consecutive 120-300 ms syllables alternating between the low
/// and high speech band, with a raised-cosine envelope each.
inline void add_speaker(std::vector<double>& x, Rng& rng, int sr, double amp, bool foreign) {
  std::size_t t = static_cast<std::size_t>(rng.uniform(0.0, 0.1) * sr);
  bool high = rng.bernoulli(0.5);
  while (t < x.size()) {
    const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.30) * sr);
    const double f0 = rng.uniform(100.0, 200.0);
    const double lo = high ? 1050.0 : 150.0;
    const double hi = high ? 1950.0 : 950.0;
    std::vector<double> seg(len, 0.0);
    for (int k = 1; k * f0 < 3000.0; ++k) {
      const double f = k * f0;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      if (f >= lo && f <= hi) add_sine(seg, f, 1.0, phase, sr, 0, len);
      if (foreign && f >= 2050.0 && f <= 2950.0) add_sine(seg, f, 0.8, phase, sr, 0, len);
    }
    for (std::size_t i = 0; i < len && t + i < x.size(); ++i) {
      const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
      x[t + i] += amp * 0.25 * env * seg[i];
    }
    t += len;
    high = !high;
  }
}

inline void add_music(std::vector<double>& x, Rng& rng, int sr) {
  const auto tones = rng.integer(2, 3);
  for (std::int64_t k = 0; k < tones; ++k) {
    add_sine(x, rng.uniform(3050.0, 4950.0), rng.uniform(0.08, 0.15), rng.uniform(0.0, 6.28), sr, 0, x.size());
  }
}

inline void add_band_noise(std::vector<double>& x, Rng& rng, int sr, double lo_hz, double hi_hz, double rms_target) {
  const std::size_t size = fft::next_pow2(x.size());
  std::vector<std::complex<double>> buf(size);
  for (auto& v : buf) v = {rng.normal(), 0.0};
  fft::transform(buf);
  const double bin_hz = static_cast<double>(sr) / static_cast<double>(size);
  for (std::size_t k = 0; k < size; ++k) {
    const double f = (k <= size / 2 ? static_cast<double>(k) : static_cast<double>(size - k)) * bin_hz;
    if (f < lo_hz || f > hi_hz) buf[k] = 0.0;
  }
  fft::transform(buf, true);
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += buf[i].real() * buf[i].real();
  const double scale = ss > 0.0 ? rms_target / std::sqrt(ss / static_cast<double>(x.size())) : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * buf[i].real();
}

/// 15 ms bursts of 7.5 kHz every 80 ms.
inline void add_vocoder_artifact(std::vector<double>& x, Rng& rng, int sr) {
  const auto period = static_cast<std::size_t>(0.080 * sr);
  const auto width = static_cast<std::size_t>(0.015 * sr);
  for (std::size_t start = rng.index(period); start < x.size(); start += period) {
    add_sine(x, 7500.0, 0.12, 0.0, sr, start, start + width);
  }
}

}  // namespace synth

/// Synthesizes one clip whose content matches `labels`. Speech is present
/// whenever num_speakers > 0 (default 1, or 2 with multispeaker).
inline Waveform make_toy_clip(const LabelVector& labels, Rng& rng, const ToyConfig& config = {}) {
  std::vector<double> x(config.samples, 0.0);
  const int sr = config.sample_rate;
  const int speakers = labels.speakers_or_default();
  for (int s = 0; s < speakers; ++s) {
    // Speakers after the first sit 0-10 dB lower.
    const double amp = s == 0 ? 1.0 : std::pow(10.0, -rng.uniform(0.0, 10.0) / 20.0);
    synth::add_speaker(x, rng, sr, amp, labels[ClassId::foreign]);
  }
  if (labels[ClassId::music]) synth::add_music(x, rng, sr);
  if (labels[ClassId::noise]) synth::add_band_noise(x, rng, sr, 5050.0, 6950.0, 0.08);
  if (labels[ClassId::synthetic]) synth::add_vocoder_artifact(x, rng, sr);
  synth::add_band_noise(x, rng, sr, 0.0, sr / 2.0, config.floor_rms);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.99 ? 0.99 / peak : 1.0;
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) w.samples[i] = static_cast<float>(x[i] * scale);
  return w;
}

/// Random label vector with each class positive at `rate`.
inline LabelVector random_toy_labels(Rng& rng, double rate) {
  LabelVector y;
  for (std::size_t c = 0; c < kNumClasses; ++c) y.flags[c] = rng.bernoulli(rate);
  y.num_speakers = y[ClassId::multispeaker] ? 2 : 1;
  return y;
}

/// A toy corpus held in memory; audio is addressed by the entry's audio_path.
struct ToyCorpus {
  std::vector<ManifestEntry> entries;  // train, val and test by split
  MixPools pools;
  std::map<std::string, Waveform> audio;

  AudioLoader loader() const {
    return [this](const ManifestEntry& e) {
      auto it = audio.find(e.audio_path);
      if (it == audio.end()) throw DataError("toy corpus has no clip " + e.audio_path);
      return it->second;
    };
  }
};

struct ToyCorpusSizes {
  std::size_t train = 2000;
  std::size_t val = 0;
  std::size_t test = 400;
  std::size_t pool = 40;  // per pool
};

inline ToyCorpus make_toy_corpus(std::uint64_t seed, const ToyCorpusSizes& sizes = {}, const ToyConfig& config = {}) {
  ToyCorpus corpus;
  Rng rng(seed);
  auto add = [&](const std::string& path, const LabelVector& y, Split split, const std::string& source) {
    Waveform w = make_toy_clip(y, rng, config);
    w.source_path = path;
    corpus.audio.emplace(path, std::move(w));
    ManifestEntry e;
    e.audio_path = path;
    e.labels = y;
    e.split = split;
    e.source = source;
    e.duration_s = static_cast<double>(config.samples) / config.sample_rate;
    return e;
  };
  auto split_block = [&](Split split, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string path = std::string(to_string(split)) + "/clip" + std::to_string(i) + ".wav";
      corpus.entries.push_back(add(path, random_toy_labels(rng, config.class_rate), split, "toy"));
    }
  };
  split_block(Split::train, sizes.train);
  split_block(Split::val, sizes.val);
  split_block(Split::test, sizes.test);

  auto pool_block = [&](std::vector<ManifestEntry>& pool, const std::string& name, LabelVector y) {
    for (std::size_t i = 0; i < sizes.pool; ++i) pool.push_back(add("pool/" + name + std::to_string(i) + ".wav", y, Split::train, name));
  };
  LabelVector english;
  english.num_speakers = 1;
  LabelVector foreign = english;
  foreign[ClassId::foreign] = true;
  LabelVector synthetic = english;
  synthetic[ClassId::synthetic] = true;
  LabelVector music;
  music[ClassId::music] = true;
  music.num_speakers = 0;
  LabelVector noise;
  noise[ClassId::noise] = true;
  noise.num_speakers = 0;
  pool_block(corpus.pools.english_speech, "english", english);
  pool_block(corpus.pools.foreign_speech, "foreign", foreign);
  pool_block(corpus.pools.synthetic_speech, "synthetic", synthetic);
  pool_block(corpus.pools.music, "music", music);
  pool_block(corpus.pools.noise, "noise", noise);
  return corpus;
}

/// Writes the corpus as WAV files under `dir` with manifest.jsonl and one
/// manifest per pool (pool_<name>.jsonl). Paths in the manifests are absolute.
inline void write_toy_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  const auto root = std::filesystem::absolute(dir);
  auto rebase = [&](ManifestEntry e) {
    e.audio_path = (root / e.audio_path).string();
    return e;
  };
  for (const auto& [path, w] : corpus.audio) {
    std::filesystem::create_directories((root / path).parent_path());
    write_wav(root / path, w, WavEncoding::float32);
  }
  std::vector<ManifestEntry> main;
  for (const auto& e : corpus.entries) main.push_back(rebase(e));
  write_manifest(root / "manifest.jsonl", main);
  auto pool = [&](const std::vector<ManifestEntry>& p, const char* name) {
    std::vector<ManifestEntry> out;
    for (const auto& e : p) out.push_back(rebase(e));
    write_manifest(root / (std::string("pool_") + name + ".jsonl"), out);
  };
  pool(corpus.pools.english_speech, "english");
  pool(corpus.pools.foreign_speech, "foreign");
  pool(corpus.pools.synthetic_speech, "synthetic");
  pool(corpus.pools.music, "music");
  pool(corpus.pools.noise, "noise");
}

}  // namespace whilter
