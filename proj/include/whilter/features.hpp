#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "whilter/audio.hpp"
#include "whilter/binio.hpp"
#include "whilter/error.hpp"
#include "whilter/fft.hpp"
#include "whilter/fileio.hpp"
#include "whilter/rng.hpp"

namespace whilter {

/// Per-clip encoder outputs, laid out [layer][frame][dim].
struct LayerStack {
  std::size_t layers = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  LayerStack() = default;
  LayerStack(std::size_t l, std::size_t t, std::size_t d) : layers(l), frames(t), dim(d), data(l * t * d, 0.0f) {}

  float at(std::size_t l, std::size_t t, std::size_t d) const { return data[(l * frames + t) * dim + d]; }
  float& at(std::size_t l, std::size_t t, std::size_t d) { return data[(l * frames + t) * dim + d]; }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const LayerStack&) const = default;
};

// WHLF container: 24-byte little-endian header then float32 payload.
inline constexpr char kFeatureMagic[4] = {'W', 'H', 'L', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::uint32_t kDtypeF16 = 1;  // reserved, not implemented
inline constexpr std::size_t kFeatureHeaderBytes = 24;

struct FeatureFileHeader {
  std::uint32_t version = kFeatureVersion;
  std::uint32_t layers = 0;
  std::uint32_t frames = 0;
  std::uint32_t dim = 0;
  std::uint32_t dtype_code = kDtypeF32;
};

inline std::vector<char> encode_features(const LayerStack& stack) {
  if (stack.data.size() != stack.layers * stack.frames * stack.dim) {
    throw std::invalid_argument("encode_features: stack data size does not match its shape");
  }
  std::vector<char> out;
  out.reserve(kFeatureHeaderBytes + stack.data.size() * 4);
  out.insert(out.end(), std::begin(kFeatureMagic), std::end(kFeatureMagic));
  binio::put_u32(out, kFeatureVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(stack.layers));
  binio::put_u32(out, static_cast<std::uint32_t>(stack.frames));
  binio::put_u32(out, static_cast<std::uint32_t>(stack.dim));
  binio::put_u32(out, kDtypeF32);
  binio::put_f32s(out, stack.data);
  return out;
}

inline LayerStack decode_features(std::span<const char> bytes, const std::string& name) {
  binio::Reader r(bytes);
  if (!r.has(4)) throw FormatError(FormatErrc::truncated_payload, name + ": file shorter than header");
  if (r.str(4) != std::string(kFeatureMagic, 4)) throw FormatError(FormatErrc::bad_magic, name);
  if (!r.has(kFeatureHeaderBytes - 4)) throw FormatError(FormatErrc::truncated_payload, name + ": header cut short");
  FeatureFileHeader h;
  h.version = r.u32();
  h.layers = r.u32();
  h.frames = r.u32();
  h.dim = r.u32();
  h.dtype_code = r.u32();
  if (h.version != kFeatureVersion) {
    throw FormatError(FormatErrc::unsupported_version, name + ": version " + std::to_string(h.version));
  }
  if (h.dtype_code != kDtypeF32) {
    throw FormatError(FormatErrc::dtype_mismatch, name + ": dtype code " + std::to_string(h.dtype_code) +
                                                      " (only 0 = float32 is supported)");
  }
  if (h.layers == 0 || h.frames == 0 || h.dim == 0) {
    throw FormatError(FormatErrc::shape_mismatch, name + ": zero-sized dimension");
  }
  const std::uint64_t count = std::uint64_t{h.layers} * h.frames * h.dim;
  if (r.remaining() < count * 4) {
    throw FormatError(FormatErrc::truncated_payload, name + ": expected " + std::to_string(count * 4) +
                                                         " payload bytes, found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > count * 4) {
    throw FormatError(FormatErrc::shape_mismatch, name + ": " + std::to_string(r.remaining() - count * 4) +
                                                      " trailing bytes after payload");
  }
  LayerStack stack(h.layers, h.frames, h.dim);
  r.f32s(stack.data);
  return stack;
}

inline void write_features(const LayerStack& stack, const std::filesystem::path& path) {
  write_file_bytes(path, encode_features(stack));
}

inline LayerStack read_features(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const DataError& e) {
    throw FormatError(FormatErrc::io, e.what());
  }
  return decode_features(bytes, path.string());
}

/// Feature file that accompanies an audio file: `<audio_path>.whlf`.
inline std::filesystem::path sidecar_path(const std::string& audio_path) { return audio_path + ".whlf"; }

struct EncoderConfig {
  std::size_t layers = 12;
  std::size_t frames = 1500;
  std::size_t dim = 768;
  std::size_t hop = 320;
  std::size_t fft_size = 512;
  std::size_t bands = 8;
  std::uint64_t seed = 0x5EED;

  std::size_t clip_samples() const { return frames * hop; }
};

/// Deterministic stand-in for a speech encoder.
///
/// Each frame of `fft_size` samples (hop `hop`, Hann window) is reduced to
/// `bands` log(1 + mean power) values over an equal partition of the
/// positive-frequency bins. A seeded [dim x bands] matrix projects them to
/// `dim`, and layer l applies tanh(scale_l * z + shift_l) with seeded
/// per-dimension scale and shift.
class MockEncoder {
 public:
  explicit MockEncoder(EncoderConfig config) : config_(config) {
    if (config_.bands == 0 || config_.fft_size < 2 * config_.bands || !std::has_single_bit(config_.fft_size)) {
      throw ConfigError("mock encoder: fft_size must be a power of two and cover all bands");
    }
    Rng rng(config_.seed);
    const double amp = std::sqrt(3.0 / static_cast<double>(config_.bands));
    projection_.resize(config_.dim * config_.bands);
    for (auto& v : projection_) v = rng.uniform(-amp, amp);
    layer_scale_.resize(config_.layers * config_.dim);
    layer_shift_.resize(config_.layers * config_.dim);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      for (std::size_t d = 0; d < config_.dim; ++d) {
        layer_scale_[l * config_.dim + d] = rng.uniform(0.5, 1.5);
        layer_shift_[l * config_.dim + d] = rng.uniform(-0.5, 0.5);
      }
    }
    window_.resize(config_.fft_size);
    for (std::size_t i = 0; i < config_.fft_size; ++i) {
      window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / config_.fft_size);
    }
  }

  const EncoderConfig& config() const { return config_; }

  /// Log band energies of every frame, [frames x bands].
  std::vector<double> band_energies(std::span<const float> samples) const {
    const std::size_t n_fft = config_.fft_size;
    const std::size_t half = n_fft / 2;
    const std::size_t per_band = half / config_.bands;
    std::vector<double> out(config_.frames * config_.bands, 0.0);
    std::vector<std::complex<double>> buf(n_fft);
    for (std::size_t t = 0; t < config_.frames; ++t) {
      const std::size_t start = t * config_.hop;
      for (std::size_t i = 0; i < n_fft; ++i) {
        const std::size_t idx = start + i;
        const double s = idx < samples.size() ? samples[idx] : 0.0;
        buf[i] = {s * window_[i], 0.0};
      }
      fft::transform(buf);
      for (std::size_t b = 0; b < config_.bands; ++b) {
        // Bins 1..half; the last band absorbs any remainder.
        const std::size_t lo = 1 + b * per_band;
        const std::size_t hi = b + 1 == config_.bands ? half + 1 : lo + per_band;
        double power = 0.0;
        for (std::size_t k = lo; k < hi; ++k) power += std::norm(buf[k]);
        out[t * config_.bands + b] = std::log1p(power / static_cast<double>(hi - lo));
      }
    }
    return out;
  }

  /// Per-layer transform of a single frame's band energies.
  void encode_frame(std::span<const double> energies, LayerStack& stack, std::size_t frame) const {
    const std::size_t dim = config_.dim;
    std::vector<double> z(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
      double acc = 0.0;
      for (std::size_t b = 0; b < config_.bands; ++b) acc += projection_[d * config_.bands + b] * energies[b];
      z[d] = acc;
    }
    for (std::size_t l = 0; l < config_.layers; ++l) {
      for (std::size_t d = 0; d < dim; ++d) {
        stack.at(l, frame, d) =
            static_cast<float>(std::tanh(layer_scale_[l * dim + d] * z[d] + layer_shift_[l * dim + d]));
      }
    }
  }

  LayerStack encode(const Waveform& w) const {
    if (w.samples.size() != config_.clip_samples()) {
      throw DataError("mock encoder: expected " + std::to_string(config_.clip_samples()) + " samples, got " +
                      std::to_string(w.samples.size()) + " (apply pad_or_truncate first)");
    }
    const auto energies = band_energies(w.samples);
    LayerStack stack(config_.layers, config_.frames, config_.dim);
    for (std::size_t t = 0; t < config_.frames; ++t) {
      encode_frame(std::span(energies).subspan(t * config_.bands, config_.bands), stack, t);
    }
    return stack;
  }

 private:
  EncoderConfig config_;
  std::vector<double> projection_;
  std::vector<double> layer_scale_;
  std::vector<double> layer_shift_;
  std::vector<double> window_;
};

enum class FeatureBackend { file, mock };

inline FeatureBackend parse_backend(const std::string& name) {
  if (name == "file") return FeatureBackend::file;
  if (name == "mock") return FeatureBackend::mock;
  throw ConfigError("unknown feature backend '" + name + "' (expected file or mock)");
}

/// Produces LayerStacks either from precomputed sidecar files or from the mock encoder.
class FeatureExtractor {
 public:
  FeatureExtractor(EncoderConfig config, FeatureBackend backend) : backend_(backend), mock_(config) {}

  FeatureBackend backend() const { return backend_; }
  const EncoderConfig& config() const { return mock_.config(); }

  /// `w` must already be padded or truncated to the clip length.
  LayerStack extract(const Waveform& w) const {
    if (backend_ == FeatureBackend::mock) return mock_.encode(w);
    return load_sidecar(w.source_path);
  }

  LayerStack load_sidecar(const std::string& audio_path) const {
    const auto path = sidecar_path(audio_path);
    if (!std::filesystem::exists(path)) throw DataError("missing feature sidecar " + path.string());
    LayerStack stack = read_features(path);
    const auto& c = mock_.config();
    if (stack.layers != c.layers || stack.frames != c.frames || stack.dim != c.dim) {
      throw FormatError(FormatErrc::shape_mismatch,
                        path.string() + ": stack is " + std::to_string(stack.layers) + "x" +
                            std::to_string(stack.frames) + "x" + std::to_string(stack.dim) + ", model expects " +
                            std::to_string(c.layers) + "x" + std::to_string(c.frames) + "x" + std::to_string(c.dim));
    }
    return stack;
  }

 private:
  FeatureBackend backend_;
  MockEncoder mock_;
};

}  // namespace whilter
