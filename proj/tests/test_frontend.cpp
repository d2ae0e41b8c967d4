#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "whilter/audio.hpp"
#include "whilter/features.hpp"
#include "whilter/rng.hpp"

using namespace whilter;
namespace fs = std::filesystem;

namespace {

Waveform sine(double hz, std::size_t n, double amp = 0.5) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate));
  }
  return w;
}

LayerStack random_stack(std::size_t l, std::size_t t, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  LayerStack s(l, t, d);
  for (auto& v : s.data) v = static_cast<float>(rng.normal());
  return s;
}

void put_u32_at(std::vector<char>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

FormatErrc decode_code(const std::vector<char>& bytes) {
  try {
    decode_features(bytes, "probe");
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode_features accepted corrupted input";
  return FormatErrc::io;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("whilter_frontend_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Wav, Pcm16RoundTripWithinQuantizationStep) {
  Waveform w = sine(440, 1000);
  Waveform back = decode_wav(encode_wav(w), "mem");
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 0.5 / 32768 + 1e-9);
  EXPECT_EQ(back.sample_rate, kSampleRate);
}

TEST(Wav, Float32RoundTripIsExact) {
  Waveform w = sine(1000, 777, 0.9);
  Waveform back = decode_wav(encode_wav(w, WavEncoding::float32), "mem");
  EXPECT_EQ(back.samples, w.samples);
}

TEST(Wav, StereoIsDownmixedByMean) {
  Waveform w = sine(300, 500);
  Waveform back = decode_wav(encode_wav(w, WavEncoding::float32, 2), "mem");
  EXPECT_EQ(back.samples, w.samples);
}

TEST(Wav, RejectsWrongRateWithResampleHint) {
  Waveform w = sine(300, 100);
  w.sample_rate = 44100;
  try {
    decode_wav(encode_wav(w), "clip.wav");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("resample"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("clip.wav"), std::string::npos);
  }
}

TEST(Wav, RejectsUnsupportedCodecAndGarbage) {
  auto bytes = encode_wav(sine(300, 100));
  bytes[34] = 8;  // bits per sample
  bytes[35] = 0;
  try {
    decode_wav(bytes, "x.wav");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported codec"), std::string::npos);
  }
  const std::vector<char> junk = {'n', 'o', 'p', 'e'};
  EXPECT_THROW(decode_wav(junk, "junk"), DataError);
  EXPECT_THROW(load_audio("/nonexistent/dir/a.wav"), DataError);
}

TEST(Wav, FileRoundTrip) {
  TempDir dir;
  Waveform w = sine(200, 320);
  write_wav(dir.path / "a.wav", w, WavEncoding::float32);
  Waveform back = load_audio(dir.path / "a.wav");
  EXPECT_EQ(back.samples, w.samples);
  EXPECT_EQ(back.source_path, (dir.path / "a.wav").string());
}

TEST(Audio, PadOrTruncate) {
  Waveform w = sine(100, 10);
  EXPECT_EQ(pad_or_truncate(w, 20).samples.size(), 20u);
  EXPECT_EQ(pad_or_truncate(w, 20).samples[15], 0.0f);
  EXPECT_EQ(pad_or_truncate(w, 4).samples, std::vector<float>(w.samples.begin(), w.samples.begin() + 4));
  EXPECT_EQ(pad_or_truncate(w).samples.size(), 480000u);
  EXPECT_THROW(pad_or_truncate(Waveform{}, 10), DataError);
}

TEST(Features, RoundTripIsBitExact) {
  LayerStack s = random_stack(3, 7, 5, 1);
  s.data[0] = -0.0f;
  s.data[1] = std::numeric_limits<float>::denorm_min();
  s.data[2] = std::numeric_limits<float>::max();
  const auto bytes = encode_features(s);
  EXPECT_EQ(bytes.size(), kFeatureHeaderBytes + 3 * 7 * 5 * 4);
  LayerStack back = decode_features(bytes, "mem");
  ASSERT_EQ(back.data.size(), s.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), s.data.data(), s.data.size() * 4), 0);
  EXPECT_EQ(back.layers, 3u);
  EXPECT_EQ(back.frames, 7u);
  EXPECT_EQ(back.dim, 5u);
}

TEST(Features, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_features(random_stack(2, 3, 4, 2));
  EXPECT_EQ(std::string(bytes.data(), 4), "WHLF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // layers
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 4);
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 0);  // dtype
}

TEST(Features, EachCorruptionHasItsOwnCode) {
  const auto good = encode_features(random_stack(2, 3, 4, 3));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_code(magic), FormatErrc::bad_magic);
  auto version = good;
  put_u32_at(version, 4, 9);
  EXPECT_EQ(decode_code(version), FormatErrc::unsupported_version);
  auto dtype = good;
  put_u32_at(dtype, 20, kDtypeF16);
  EXPECT_EQ(decode_code(dtype), FormatErrc::dtype_mismatch);
  auto cut = good;
  cut.resize(cut.size() - 3);
  EXPECT_EQ(decode_code(cut), FormatErrc::truncated_payload);
  auto header_only = std::vector<char>(good.begin(), good.begin() + 10);
  EXPECT_EQ(decode_code(header_only), FormatErrc::truncated_payload);
  auto bigger = good;
  put_u32_at(bigger, 12, 4);  // frames 3 -> 4, payload now too short
  EXPECT_EQ(decode_code(bigger), FormatErrc::truncated_payload);
  auto smaller = good;
  put_u32_at(smaller, 12, 2);  // payload now has trailing bytes
  EXPECT_EQ(decode_code(smaller), FormatErrc::shape_mismatch);
  auto zero = good;
  put_u32_at(zero, 16, 0);
  EXPECT_EQ(decode_code(zero), FormatErrc::shape_mismatch);
  try {
    read_features("/nonexistent/x.whlf");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::io);
  }
}

TEST(Features, SidecarPath) { EXPECT_EQ(sidecar_path("a/b.wav").string(), "a/b.wav.whlf"); }

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.layers = 3;
  c.frames = 20;
  c.dim = 16;
  return c;
}

}  // namespace

TEST(MockEncoder, ShapeDeterminismAndRange) {
  MockEncoder enc(small_encoder());
  Waveform w = sine(500, small_encoder().clip_samples());
  LayerStack a = enc.encode(w);
  LayerStack b = MockEncoder(small_encoder()).encode(w);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.layers, 3u);
  EXPECT_EQ(a.frames, 20u);
  EXPECT_EQ(a.dim, 16u);
  for (float v : a.data) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
  EncoderConfig other = small_encoder();
  other.seed = 1;
  EXPECT_NE(MockEncoder(other).encode(w), a);
  EXPECT_THROW(enc.encode(sine(500, 100)), DataError);
}

TEST(MockEncoder, SineEnergyLandsInItsBand) {
  MockEncoder enc(small_encoder());
  // 512-point frames at 16 kHz: 256 positive bins of 31.25 Hz, 32 bins (1 kHz) per band.
  for (int band = 0; band < 8; ++band) {
    const double hz = 1000.0 * band + 500.0;
    const auto e = enc.band_energies(sine(hz, small_encoder().clip_samples()).samples);
    const std::size_t t = 5;
    std::size_t best = 0;
    for (std::size_t b = 1; b < 8; ++b)
      if (e[t * 8 + b] > e[t * 8 + best]) best = b;
    EXPECT_EQ(best, static_cast<std::size_t>(band)) << hz << " Hz";
  }
}

TEST(MockEncoder, SilenceGivesConstantFrames) {
  MockEncoder enc(small_encoder());
  Waveform silent;
  silent.samples.assign(small_encoder().clip_samples(), 0.0f);
  const auto e = enc.band_energies(silent.samples);
  for (double v : e) EXPECT_EQ(v, 0.0);
  LayerStack s = enc.encode(silent);
  for (std::size_t l = 0; l < s.layers; ++l)
    for (std::size_t t = 1; t < s.frames; ++t)
      for (std::size_t d = 0; d < s.dim; ++d) EXPECT_EQ(s.at(l, t, d), s.at(l, 0, d));
}

TEST(FeatureExtractor, FileBackendChecksSidecars) {
  TempDir dir;
  const EncoderConfig cfg = small_encoder();
  FeatureExtractor ex(cfg, FeatureBackend::file);
  const std::string audio = (dir.path / "clip.wav").string();
  EXPECT_THROW(ex.load_sidecar(audio), DataError);
  write_features(random_stack(cfg.layers, cfg.frames, cfg.dim, 4), sidecar_path(audio));
  EXPECT_EQ(ex.load_sidecar(audio).frames, cfg.frames);
  write_features(random_stack(cfg.layers, cfg.frames + 1, cfg.dim, 4), sidecar_path(audio));
  try {
    ex.load_sidecar(audio);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::shape_mismatch);
  }
  EXPECT_EQ(parse_backend("mock"), FeatureBackend::mock);
  EXPECT_THROW(parse_backend("whisper"), ConfigError);
}

TEST(FeatureExtractor, MockBackendEncodesWaveform) {
  const EncoderConfig cfg = small_encoder();
  FeatureExtractor ex(cfg, FeatureBackend::mock);
  Waveform w = sine(700, cfg.clip_samples());
  EXPECT_EQ(ex.extract(w), MockEncoder(cfg).encode(w));
}
