#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "whilter/checkpoint.hpp"
#include "whilter/gradcheck.hpp"
#include "whilter/model.hpp"

using namespace whilter;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_layers = 3;
  c.frames = 8;
  c.enc_dim = 16;
  c.model_dim = 8;
  c.tf_layers = 2;
  c.tf_heads = 2;
  c.ff_dim = 16;
  c.head_hidden = 8;
  return c;
}

LayerStack random_stack(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  LayerStack s(c.encoder_layers, c.frames, c.enc_dim);
  for (auto& v : s.data) v = static_cast<float>(rng.uniform(-1, 1));
  return s;
}

LabelVector labels(std::initializer_list<int> flags) {
  LabelVector y;
  std::size_t i = 0;
  for (int f : flags) y.flags[i++] = f != 0;
  return y;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("whilter_model_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(ModelConfig, DefaultsAndValidation) {
  ModelConfig c;
  EXPECT_EQ(c.n_classes, 5u);
  EXPECT_EQ(c.encoder_layers, 12u);
  EXPECT_EQ(c.frames, 1500u);
  EXPECT_EQ(c.enc_dim, 768u);
  c.tf_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.tf_heads = 4;
  c.dropout_p = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig c = tiny_config();
  c.dropout_p = 0.125;
  c.positional_encoding = false;
  EXPECT_EQ(ModelConfig::from_kv(c.to_kv()), c);
  auto kv = c.to_kv();
  kv["frames"] = "eight";
  EXPECT_THROW(ModelConfig::from_kv(kv), ConfigError);
  kv.erase("frames");
  EXPECT_THROW(ModelConfig::from_kv(kv), ConfigError);
}

TEST(Model, ParameterCountMatchesArchitecture) {
  const ModelConfig c;
  Rng rng(1);
  Model<float> m(c, rng);
  const std::size_t d = c.model_dim, f = c.ff_dim, h = c.head_hidden;
  const std::size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  const std::size_t per_head = (d * h + h) + (h + 1) + (d + 1);
  const std::size_t expected = c.encoder_layers + (c.enc_dim * d + d) + c.tf_layers * per_layer + 2 * d + 5 * per_head;
  EXPECT_EQ(m.parameter_count(), expected);
  const auto params = m.parameters();
  EXPECT_EQ(params.front().name, "fusion.raw");
  EXPECT_EQ(params.back().name, "heads.4.out.bias");
}

TEST(Model, FusionStartsUniform) {
  Rng rng(2);
  Model<double> m(tiny_config(), rng);
  const auto w = m.fusion_weights();
  for (double v : w.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const LayerStack s = random_stack(tiny_config(), 3);
  const auto fused = m.fuse_layers(s);
  double expect = 0;
  for (std::size_t l = 0; l < 3; ++l) expect += s.at(l, 4, 7) / 3.0;
  EXPECT_NEAR(fused.at(4, 7), expect, 1e-12);
}

TEST(Model, ForwardShapesAndAttentionDistributions) {
  Rng rng(3);
  Model<double> m(tiny_config(), rng);
  const auto res = m.forward(random_stack(tiny_config(), 4), Mode::eval);
  EXPECT_EQ(res.logits.rows(), 1u);
  EXPECT_EQ(res.logits.cols(), 5u);
  ASSERT_EQ(res.head_attention.size(), 5u);
  for (const auto& a : res.head_attention) {
    EXPECT_EQ(a.numel(), 8u);
    double s = 0;
    for (double v : a.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Model, EvalIsDeterministicAndTrainUsesDropout) {
  Rng rng(4);
  ModelConfig c = tiny_config();
  c.dropout_p = 0.5;
  Model<double> m(c, rng);
  const auto s = random_stack(c, 5);
  const auto a = m.predict(s), b = m.predict(s);
  EXPECT_EQ(a.logits, b.logits);
  Rng d1(1), d2(2);
  const auto t1 = m.forward(s, Mode::train, &d1).logits;
  const auto t2 = m.forward(s, Mode::train, &d2).logits;
  EXPECT_NE(std::vector<double>(t1.data().begin(), t1.data().end()),
            std::vector<double>(t2.data().begin(), t2.data().end()));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.probs[i], 1.0 / (1.0 + std::exp(-a.logits[i])), 1e-15);
}

TEST(Model, RejectsMismatchedStacksAndUninitializedUse) {
  Rng rng(5);
  Model<float> m(tiny_config(), rng);
  ModelConfig other = tiny_config();
  other.encoder_layers = 4;
  EXPECT_THROW(m.predict(random_stack(other, 1)), DataError);
  other = tiny_config();
  other.frames = 9;
  EXPECT_THROW(m.predict(random_stack(other, 1)), DataError);
  Model<float> empty;
  EXPECT_THROW(empty.predict(random_stack(tiny_config(), 1)), std::logic_error);
}

TEST(Model, PositionalEncodingFormula) {
  const auto pe = sinusoidal_encoding<double>(5, 6);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * k / 6.0);
      EXPECT_NEAR(pe.at(t, 2 * k), std::sin(angle), 1e-15);
      EXPECT_NEAR(pe.at(t, 2 * k + 1), std::cos(angle), 1e-15);
    }
  }
  ModelConfig c = tiny_config();
  Rng r1(6), r2(6);
  Model<double> with(c, r1);
  c.positional_encoding = false;
  Model<double> without(c, r2);
  const auto s = random_stack(c, 7);
  EXPECT_NE(with.predict(s).logits, without.predict(s).logits);
}

TEST(Model, FullGradientCheckInDouble) {
  ModelConfig c = tiny_config();
  c.dropout_p = 0.0;
  Rng rng(8);
  Model<double> m(c, rng);
  const LayerStack s = random_stack(c, 9);
  const auto y = label_targets<double>(labels({1, 0, 0, 1, 0}), 5);
  std::vector<std::pair<std::string, Tensor<double>>> params;
  for (const auto& p : m.parameters()) params.push_back({p.name, p.tensor});
  const auto res = grad_check([&] { return binary_cross_entropy<double>(m.forward(s, Mode::eval).logits, y); }, params);
  EXPECT_LT(res.max_relative_error, 1e-3) << res.worst_param << "[" << res.worst_index << "]";
  EXPECT_EQ(res.checked, m.parameter_count());
}

TEST(Model, BceLossConventions) {
  const std::vector<double> half(5, 0.5), y = {1, 0, 1, 0, 0};
  EXPECT_NEAR(bce_loss(half, y), std::log(2.0), 1e-15);
  const std::vector<double> perfect = {1, 0, 1, 0, 0};
  EXPECT_LT(bce_loss(perfect, y), 1e-6);
  EXPECT_THROW(bce_loss(std::vector<double>{0.5}, y), std::invalid_argument);
}

TEST(Model, CastPreservesOutputs) {
  Rng rng(10);
  Model<float> m(tiny_config(), rng);
  Model<double> md = m.cast<double>();
  const auto s = random_stack(tiny_config(), 11);
  const auto a = m.predict(s), b = md.predict(s);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.logits[i], b.logits[i], 1e-4);
  // Deep copy: updating the cast does not touch the source.
  md.parameters()[1].tensor.data()[0] += 1.0;
  EXPECT_EQ(m.predict(s).logits, a.logits);
}

TEST(TrainStep, ReducesLossOnFixedBatch) {
  ModelConfig c = tiny_config();
  c.dropout_p = 0.0;
  Rng rng(12);
  Model<float> m(c, rng);
  Adam<float> opt(m.parameters());
  const LayerStack s1 = random_stack(c, 13), s2 = random_stack(c, 14);
  const std::vector<Example> batch = {{&s1, labels({1, 0, 0, 0, 1})}, {&s2, labels({0, 1, 1, 0, 0})}};
  const double first = train_step(m, opt, batch, 1e-2, rng);
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_step(m, opt, batch, 1e-2, rng);
  EXPECT_LT(last, first * 0.5);
  EXPECT_EQ(opt.state().step, 31);
}

TEST(TrainStep, ReturnedLossMatchesMeanPerSampleBce) {
  ModelConfig c = tiny_config();
  c.dropout_p = 0.0;
  Rng rng(15);
  Model<float> m(c, rng);
  const LayerStack s1 = random_stack(c, 16), s2 = random_stack(c, 17);
  const auto y1 = labels({1, 0, 0, 0, 1}), y2 = labels({0, 0, 0, 0, 0});
  const double expected = 0.5 * (bce_loss(m.predict(s1), y1) + bce_loss(m.predict(s2), y2));
  Adam<float> opt(m.parameters());
  const std::vector<Example> batch = {{&s1, y1}, {&s2, y2}};
  EXPECT_NEAR(train_step(m, opt, batch, 1e-3, rng), expected, 1e-5);
}

TEST(TrainStep, NonFiniteInputRaisesNumericError) {
  Rng rng(18);
  Model<float> m(tiny_config(), rng);
  Adam<float> opt(m.parameters());
  LayerStack s = random_stack(tiny_config(), 19);
  s.data[3] = std::numeric_limits<float>::quiet_NaN();
  const std::vector<Example> batch = {{&s, labels({0, 0, 0, 0, 0})}};
  EXPECT_THROW(train_step(m, opt, batch, 1e-3, rng), NumericError);
}

TEST(Checkpoint, RoundTripRestoresModelOptimizerAndRng) {
  TempDir dir;
  Rng rng(20);
  Model<float> m(tiny_config(), rng);
  Adam<float> opt(m.parameters());
  const LayerStack s = random_stack(tiny_config(), 21);
  const std::vector<Example> batch = {{&s, labels({1, 1, 0, 0, 0})}};
  train_step(m, opt, batch, 1e-3, rng);
  save_checkpoint(dir.path, m, &opt.state(), &rng, 3, {{"note", "x"}});

  Checkpoint ck = load_checkpoint(dir.path);
  EXPECT_EQ(ck.epoch, 3);
  EXPECT_EQ(ck.extra.at("note"), "x");
  EXPECT_EQ(ck.model.config(), m.config());
  EXPECT_EQ(ck.model.predict(s).logits, m.predict(s).logits);
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 1);
  EXPECT_EQ(ck.optimizer->m, opt.state().m);
  EXPECT_EQ(ck.optimizer->v, opt.state().v);
  ASSERT_TRUE(ck.rng_state.has_value());
  Rng restored(0);
  restored.set_state(*ck.rng_state);
  EXPECT_EQ(restored.next(), rng.next());
}

TEST(Checkpoint, ConfigMismatchAndCorruptionAreReported) {
  TempDir dir;
  Rng rng(22);
  Model<float> m(tiny_config(), rng);
  save_checkpoint(dir.path, m, nullptr, nullptr, 0);
  ModelConfig other = tiny_config();
  other.model_dim = 16;
  try {
    load_checkpoint(dir.path, &other);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model_dim"), std::string::npos);
  }
  auto bytes = read_file_bytes(dir.path / "params");
  bytes[0] = 'Z';
  write_file_bytes(dir.path / "params", bytes);
  try {
    load_checkpoint(dir.path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::bad_magic);
  }
  bytes[0] = 'W';
  bytes.resize(bytes.size() - 10);
  write_file_bytes(dir.path / "params", bytes);
  try {
    load_checkpoint(dir.path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrc::truncated_payload);
  }
  EXPECT_THROW(load_checkpoint(dir.path / "missing"), DataError);
}
