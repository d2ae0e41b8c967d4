#pragma once

// Two-stage training driver: weighted sampling, then per batch either dynamic
// mixing (simulated stage) or augmentation (fine-tuning stage), feature
// extraction and one Adam step. Randomness comes from per-epoch streams
// derived from the run seed, so a resumed run matches an uninterrupted one.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "whilter/augment.hpp"
#include "whilter/checkpoint.hpp"
#include "whilter/evaluate.hpp"
#include "whilter/features.hpp"
#include "whilter/mixing.hpp"
#include "whilter/model.hpp"
#include "whilter/optim.hpp"
#include "whilter/sampler.hpp"

namespace whilter {

enum class Stage { simulated, finetune };

inline const char* to_string(Stage s) { return s == Stage::simulated ? "simulated" : "finetune"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "simulated") return Stage::simulated;
  if (s == "finetune") return Stage::finetune;
  throw ConfigError("unknown stage '" + s + "' (expected simulated or finetune)");
}

struct StagePreset {
  int epochs;
  double eta;
  double gamma;
};

inline StagePreset stage_preset(Stage s) {
  return s == Stage::simulated ? StagePreset{10, 1e-5, 0.7} : StagePreset{100, 1e-5, 0.98};
}

struct RunConfig {
  std::uint64_t seed = 0;
  Stage stage = Stage::simulated;
  int epochs = 10;
  double eta = 1e-5;
  double gamma = 0.7;
  std::size_t samples_per_epoch = kSamplesPerEpoch;
  std::size_t batch_size = kBatchSize;
  std::array<double, kNumClasses> thresholds = {0.5, 0.5, 0.5, 0.5, 0.5};
  ModelConfig model;
  EncoderConfig encoder;
  FeatureBackend backend = FeatureBackend::mock;
  MixConfig mix;
  AugmentConfig augment;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path loss_log;        // empty: no file log
  bool resume = false;

  static RunConfig for_stage(Stage s) {
    RunConfig c;
    const auto p = stage_preset(s);
    c.stage = s;
    c.epochs = p.epochs;
    c.eta = p.eta;
    c.gamma = p.gamma;
    return c;
  }

  LrSchedule schedule() const { return {eta, gamma}; }

  /// Encoder geometry must agree with the model's input side.
  void validate() const {
    model.validate();
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(eta > 0.0) || !(gamma > 0.0)) throw ConfigError("eta and gamma must be positive");
    if (batch_size == 0 || samples_per_epoch < batch_size) {
      throw ConfigError("samples_per_epoch must hold at least one batch");
    }
    if (encoder.layers != model.encoder_layers || encoder.frames != model.frames || encoder.dim != model.enc_dim) {
      throw ConfigError("encoder geometry (layers, frames, dim) must match the model config");
    }
    const bool mixing = stage == Stage::simulated && (mix.mix_speech || mix.mix_noise || mix.mix_music);
    const AugmentConfig& a = augment;
    const bool augmenting = stage == Stage::finetune &&
                            (a.p_speed > 0 || a.p_freq_drop > 0 || a.p_frame_drop > 0 || a.p_bit_reduce > 0 ||
                             a.p_sign_flip > 0);
    if (backend == FeatureBackend::file && (mixing || augmenting)) {
      throw ConfigError("mixing and augmentation alter the waveform and need the mock feature backend");
    }
  }
};

/// Encoder settings stored alongside a checkpoint so evaluation rebuilds the same front end.
inline std::map<std::string, std::string> encoder_extra(const EncoderConfig& e, FeatureBackend backend) {
  return {{"encoder.hop", std::to_string(e.hop)},
          {"encoder.fft_size", std::to_string(e.fft_size)},
          {"encoder.bands", std::to_string(e.bands)},
          {"encoder.seed", std::to_string(e.seed)},
          {"encoder.backend", backend == FeatureBackend::mock ? "mock" : "file"}};
}

inline EncoderConfig encoder_from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.model.config();
  EncoderConfig e;
  e.layers = m.encoder_layers;
  e.frames = m.frames;
  e.dim = m.enc_dim;
  auto get = [&](const char* key, auto fallback) {
    auto it = ck.extra.find(key);
    return it == ck.extra.end() ? fallback : static_cast<decltype(fallback)>(std::stoull(it->second));
  };
  e.hop = get("encoder.hop", e.hop);
  e.fft_size = get("encoder.fft_size", e.fft_size);
  e.bands = get("encoder.bands", e.bands);
  e.seed = get("encoder.seed", e.seed);
  return e;
}

struct LossRecord {
  int epoch = 0;
  std::size_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
};

inline std::string loss_record_json(const LossRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["iter"] = r.iter;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  return j.dump();
}

struct EpochSummary {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_macro_f1;
  std::vector<ClassReport> val_reports;
};

/// Everything the loop reads besides the config.
struct TrainData {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;  // optional
  MixPools pools;                  // read only in the simulated stage
  AudioLoader loader = wav_loader();
};

struct TrainResult {
  Model<float> model;
  std::vector<LossRecord> log;
  std::vector<EpochSummary> epochs;
  std::optional<double> best_val_f1;
  std::vector<std::string> warnings;
};

/// Observer for progress output; called after every epoch.
using EpochCallback = std::function<void(const EpochSummary&)>;

namespace detail {

// Stream ids for the per-epoch generators; epoch e uses base + 4 e + k.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kEpochStreamBase = 16;

inline Rng epoch_stream(std::uint64_t seed, int epoch, std::uint64_t k) {
  return Rng::stream(seed, kEpochStreamBase + 4 * static_cast<std::uint64_t>(epoch) + k);
}

inline double macro_f1(const std::vector<ClassReport>& reports) {
  double s = 0.0;
  for (const auto& r : reports) s += r.f1;
  return reports.empty() ? 0.0 : s / static_cast<double>(reports.size());
}

}  // namespace detail

/// Fresh model for a run; initialization draws from its own stream.
inline Model<float> init_model(const RunConfig& config) {
  Rng rng = Rng::stream(config.seed, detail::kInitStream);
  return Model<float>(config.model, rng);
}

/// Runs `config.epochs` epochs starting from `model` (modified in place).
/// With `resume` set and a `last` checkpoint present, continues after its epoch.
inline TrainResult run_training(const RunConfig& config, const TrainData& data, Model<float> model,
                                const EpochCallback& on_epoch = {}) {
  config.validate();
  if (data.train.empty()) throw DataError("training manifest has no entries");
  if (!(model.config() == config.model)) throw ConfigError("model does not match the run's model config");
  if (config.stage == Stage::simulated) {
    validate_pools(data.pools);
  }

  TrainResult result;
  Adam<float> optimizer(model.parameters());
  int first_epoch = 0;
  const auto last_dir = config.checkpoint_dir / "last";
  const auto best_dir = config.checkpoint_dir / "best";
  if (config.resume && !config.checkpoint_dir.empty() && std::filesystem::exists(last_dir / "config")) {
    Checkpoint ck = load_checkpoint(last_dir, &config.model);
    model.copy_parameters_from(ck.model);
    if (ck.optimizer) optimizer.load_state(*ck.optimizer);
    first_epoch = ck.epoch + 1;
    if (auto it = ck.extra.find("best_val_f1"); it != ck.extra.end()) result.best_val_f1 = std::stod(it->second);
  }

  std::ofstream log_file;
  if (!config.loss_log.empty()) {
    if (config.loss_log.has_parent_path()) std::filesystem::create_directories(config.loss_log.parent_path());
    log_file.open(config.loss_log, first_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (!log_file) throw DataError("cannot write loss log " + config.loss_log.string());
  }

  const SamplerWeights weights = compute_class_weights(data.train);
  result.warnings = weights.warnings;
  const FeatureExtractor extractor(config.encoder, config.backend);
  const FeatureSource eval_features = make_feature_source(extractor, data.loader);
  const std::size_t clip = config.encoder.clip_samples();
  const LrSchedule schedule = config.schedule();

  for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
    Rng sample_rng = detail::epoch_stream(config.seed, epoch, 0);
    Rng data_rng = detail::epoch_stream(config.seed, epoch, 1);
    Rng dropout_rng = detail::epoch_stream(config.seed, epoch, 2);
    const double lr = schedule.lr_at(epoch);
    const auto indices = sample_epoch(data.train, weights, sample_rng, config.samples_per_epoch);
    const auto batches = make_batches(indices, config.batch_size);

    EpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    for (std::size_t it = 0; it < batches.size(); ++it) {
      std::vector<LayerStack> stacks;
      std::vector<Example> examples;
      stacks.reserve(batches[it].size());
      if (config.backend == FeatureBackend::file) {
        for (std::size_t i : batches[it]) stacks.push_back(extractor.load_sidecar(data.train[i].audio_path));
        for (std::size_t k = 0; k < stacks.size(); ++k) examples.push_back({&stacks[k], data.train[batches[it][k]].labels});
      } else {
        std::vector<MixSample> batch;
        batch.reserve(batches[it].size());
        for (std::size_t i : batches[it]) {
          const auto& e = data.train[i];
          Waveform w;
          try {
            w = data.loader(e);
          } catch (const DataError& err) {
            throw DataError(e.audio_path + ": " + err.what());
          }
          w.source_path = e.audio_path;
          batch.push_back({pad_or_truncate(w, clip), e.labels});
        }
        if (config.stage == Stage::simulated) {
          dynamic_mix(batch, data.pools, data.loader, data_rng, config.mix);
        } else {
          for (auto& s : batch) s.audio = augment(s.audio, data_rng, config.augment);
        }
        for (const auto& s : batch) stacks.push_back(extractor.extract(s.audio));
        for (std::size_t k = 0; k < batch.size(); ++k) examples.push_back({&stacks[k], batch[k].labels});
      }
      const double loss = train_step(model, optimizer, examples, lr, dropout_rng);
      LossRecord rec{epoch, it, loss, lr};
      if (log_file) log_file << loss_record_json(rec) << '\n';
      result.log.push_back(rec);
      summary.mean_loss += loss;
    }
    if (!batches.empty()) summary.mean_loss /= static_cast<double>(batches.size());
    if (log_file) log_file.flush();

    if (!data.val.empty()) {
      EvalOptions quiet;
      quiet.timing = false;
      auto ev = evaluate(model, std::span<const ManifestEntry>(data.val), eval_features, config.thresholds, quiet);
      summary.val_macro_f1 = detail::macro_f1(ev.reports);
      summary.val_reports = std::move(ev.reports);
    }

    if (!config.checkpoint_dir.empty()) {
      auto extra = encoder_extra(config.encoder, config.backend);
      extra["stage"] = to_string(config.stage);
      extra["seed"] = std::to_string(config.seed);
      const bool improved = summary.val_macro_f1 && (!result.best_val_f1 || *summary.val_macro_f1 > *result.best_val_f1);
      if (improved) result.best_val_f1 = summary.val_macro_f1;
      if (result.best_val_f1) extra["best_val_f1"] = detail::fmt("%.17g", *result.best_val_f1);
      if (summary.val_macro_f1) extra["val_macro_f1"] = detail::fmt("%.17g", *summary.val_macro_f1);
      save_checkpoint(last_dir, model, &optimizer.state(), nullptr, epoch, extra);
      if (improved) save_checkpoint(best_dir, model, nullptr, nullptr, epoch, extra);
      std::ofstream epochs_log(config.checkpoint_dir / "epochs.jsonl", epoch == 0 ? std::ios::trunc : std::ios::app);
      nlohmann::ordered_json j;
      j["epoch"] = epoch;
      j["lr"] = lr;
      j["mean_loss"] = summary.mean_loss;
      if (summary.val_macro_f1) {
        j["val_macro_f1"] = *summary.val_macro_f1;
        for (const auto& r : summary.val_reports) j["val_f1"][r.class_name] = r.f1;
      }
      epochs_log << j.dump() << '\n';
    } else if (summary.val_macro_f1 && (!result.best_val_f1 || *summary.val_macro_f1 > *result.best_val_f1)) {
      result.best_val_f1 = summary.val_macro_f1;
    }

    if (on_epoch) on_epoch(summary);
    result.epochs.push_back(std::move(summary));
  }
  result.model = model;
  return result;
}

}  // namespace whilter
