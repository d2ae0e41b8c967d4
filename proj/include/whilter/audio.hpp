#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "whilter/binio.hpp"
#include "whilter/error.hpp"
#include "whilter/fileio.hpp"

namespace whilter {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kClipSeconds = 30;
inline constexpr std::size_t kClipSamples = kClipSeconds * kSampleRate;  // 480000

/// Mono audio at 16 kHz, samples nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string source_path;

  std::size_t size() const { return samples.size(); }
};

enum class WavEncoding { pcm16, float32 };

namespace detail {
inline constexpr std::uint16_t kWavPcm = 1;
inline constexpr std::uint16_t kWavFloat = 3;
inline constexpr std::uint16_t kWavExtensible = 0xFFFE;
}  // namespace detail

/// Decodes a RIFF/WAVE byte buffer. `name` is used in error messages.
inline Waveform decode_wav(std::span<const char> bytes, const std::string& name) {
  binio::Reader r(bytes);
  if (!r.has(12) || r.str(4) != "RIFF") throw DataError(name + ": not a RIFF file");
  r.u32();
  if (r.str(4) != "WAVE") throw DataError(name + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.has(8)) {
    const std::string id = r.str(4);
    const std::uint32_t size = r.u32();
    if (!r.has(size)) {
      if (id != "data") throw DataError(name + ": truncated '" + id + "' chunk");
    }
    if (id == "fmt ") {
      if (size < 16) throw DataError(name + ": short fmt chunk");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::size_t consumed = 16;
      if (format == detail::kWavExtensible && size >= 40) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // leading bytes of the sub-format GUID
        consumed += 10;
      }
      r.skip(size - consumed + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      const bool pcm16 = format == detail::kWavPcm && bits == 16;
      const bool f32 = format == detail::kWavFloat && bits == 32;
      if (!pcm16 && !f32) {
        throw DataError(name + ": unsupported codec (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bit); expected 16-bit PCM or 32-bit float");
      }
      if (channels == 0) throw DataError(name + ": zero channels");
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw DataError(name + ": sample rate " + std::to_string(rate) +
                        " Hz, expected 16000 Hz; resample externally first");
      }
      const std::size_t bytes_per_sample = bits / 8;
      const std::size_t available = std::min<std::size_t>(size, r.remaining());
      const std::size_t frames = available / (bytes_per_sample * channels);
      Waveform w;
      w.source_path = name;
      w.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          if (pcm16) {
            acc += static_cast<std::int16_t>(r.u16()) / 32768.0;
          } else {
            acc += r.f32();
          }
        }
        w.samples[f] = static_cast<float>(acc / channels);
      }
      return w;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  throw DataError(name + ": no data chunk");
}

/// Reads a PCM WAV file (16-bit integer or 32-bit float, any channel count).
/// Multichannel input is downmixed by the channel mean.
inline Waveform load_audio(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Waveform w = decode_wav(bytes, path.string());
  w.source_path = path.string();
  return w;
}

inline std::vector<char> encode_wav(const Waveform& w, WavEncoding enc = WavEncoding::pcm16,
                                    std::uint16_t channels = 1) {
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * channels * (bits / 8));
  std::vector<char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  binio::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  binio::put_u32(out, 16);
  binio::put_u16(out, enc == WavEncoding::pcm16 ? detail::kWavPcm : detail::kWavFloat);
  binio::put_u16(out, channels);
  binio::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  binio::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * channels * (bits / 8));
  binio::put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  binio::put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  binio::put_u32(out, data_bytes);
  for (float s : w.samples) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      if (enc == WavEncoding::pcm16) {
        const double v = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
        binio::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
      } else {
        binio::put_f32(out, s);
      }
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding enc = WavEncoding::pcm16) {
  write_file_bytes(path, encode_wav(w, enc));
}

/// Zero-pads at the tail or keeps the head so the result has exactly `length` samples.
inline Waveform pad_or_truncate(const Waveform& w, std::size_t length = kClipSamples) {
  if (w.samples.empty()) throw DataError("pad_or_truncate: empty waveform " + w.source_path);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.source_path = w.source_path;
  out.samples.assign(length, 0.0f);
  std::copy_n(w.samples.begin(), std::min(length, w.samples.size()), out.samples.begin());
  return out;
}

inline double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

}  // namespace whilter
