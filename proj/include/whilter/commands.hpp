#pragma once

// Subcommand implementations behind the `whilter` tool. Each takes a plain
// options struct so tests can drive them without a command line.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "whilter/checkpoint.hpp"
#include "whilter/evaluate.hpp"
#include "whilter/fileio.hpp"
#include "whilter/kvfile.hpp"
#include "whilter/labelstudio.hpp"
#include "whilter/manifest.hpp"
#include "whilter/train.hpp"

namespace whilter {

using Thresholds = std::array<double, kNumClasses>;

/// Parses "0.5" (all classes) or "multispeaker=0.6,synthetic=0.4" (others keep `base`).
inline Thresholds parse_thresholds(const std::string& text, Thresholds base = {0.5, 0.5, 0.5, 0.5, 0.5}) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad threshold value '" + s + "'");
  };
  if (text.empty()) return base;
  if (text.find('=') == std::string::npos) {
    base.fill(number(text));
    return base;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("bad threshold item '" + item + "' (expected class=value)");
    base[class_index(trim(item.substr(0, eq)))] = number(trim(item.substr(eq + 1)));
  }
  return base;
}

/// Parses a comma-separated list of class names.
inline std::array<bool, kNumClasses> parse_class_set(const std::string& text) {
  std::array<bool, kNumClasses> out{};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out[class_index(item)] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// train / finetune

struct TrainOptions {
  RunConfig run;
  std::filesystem::path manifest;  // train and val entries selected by split
  std::filesystem::path pool_english, pool_foreign, pool_synthetic, pool_music, pool_noise;
  std::filesystem::path base_checkpoint;  // finetune only
  std::filesystem::path out_dir;          // checkpoints and logs
  bool quiet = false;
};

inline MixPools load_pools(const TrainOptions& o) {
  auto load = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string("missing pool manifest for ") + what);
    return parse_manifest(p);
  };
  MixPools pools;
  const auto& m = o.run.mix;
  if (m.mix_speech) {
    if (m.speech_proportions[0] > 0) pools.english_speech = load(o.pool_english, "english speech");
    if (m.speech_proportions[1] > 0) pools.foreign_speech = load(o.pool_foreign, "foreign speech");
    if (m.speech_proportions[2] > 0) pools.synthetic_speech = load(o.pool_synthetic, "synthetic speech");
  }
  if (m.mix_music) pools.music = load(o.pool_music, "music");
  if (m.mix_noise) pools.noise = load(o.pool_noise, "noise");
  return pools;
}

inline void print_epoch(const EpochSummary& s) {
  std::printf("epoch %d  lr %.4g  loss %.5f", s.epoch, s.lr, s.mean_loss);
  if (s.val_macro_f1) std::printf("  val macro-F1 %.4f", *s.val_macro_f1);
  std::printf("\n");
  std::fflush(stdout);
}

inline TrainResult run_command(TrainOptions o, const AudioLoader& loader, Model<float> model) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  o.run.checkpoint_dir = o.out_dir;
  o.run.loss_log = o.out_dir / "loss.jsonl";
  const auto all = parse_manifest(o.manifest);
  TrainData data;
  data.train = filter_split(all, Split::train);
  data.val = filter_split(all, Split::val);
  data.loader = loader;
  if (o.run.stage == Stage::simulated) data.pools = load_pools(o);
  auto result = run_training(o.run, data, std::move(model), o.quiet ? EpochCallback{} : EpochCallback(print_epoch));
  if (!o.quiet)
    for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return result;
}

/// Stage one: simulated data with dynamic mixing, from a fresh model.
inline TrainResult cmd_train(TrainOptions o, const AudioLoader& loader = wav_loader()) {
  if (o.run.stage != Stage::simulated) throw ConfigError("train runs the simulated stage; use finetune");
  Model<float> model = init_model(o.run);
  return run_command(std::move(o), loader, std::move(model));
}

/// Stage two: continues from a base checkpoint with augmentation instead of
/// mixing. Optimizer moments start fresh.
inline TrainResult cmd_finetune(TrainOptions o, const AudioLoader& loader = wav_loader()) {
  if (o.run.stage != Stage::finetune) throw ConfigError("finetune requires stage=finetune");
  if (o.base_checkpoint.empty()) throw ConfigError("finetune needs --base");
  Checkpoint base = load_checkpoint(o.base_checkpoint);
  o.run.model = base.model.config();
  o.run.encoder = encoder_from_checkpoint(base);
  return run_command(std::move(o), loader, std::move(base.model));
}

// ---------------------------------------------------------------------------
// eval

struct EvalCommandOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  Split split = Split::test;
  Thresholds thresholds = {0.5, 0.5, 0.5, 0.5, 0.5};
  std::optional<FeatureBackend> backend;  // default: as recorded in the checkpoint
  std::filesystem::path out_dir;          // report.txt, report.csv, report.jsonl
  bool timing = true;
  bool quiet = false;
};

inline FeatureBackend checkpoint_backend(const Checkpoint& ck, std::optional<FeatureBackend> requested) {
  if (requested) return *requested;
  auto it = ck.extra.find("encoder.backend");
  return it == ck.extra.end() ? FeatureBackend::file : parse_backend(it->second);
}

inline EvalResult cmd_eval(const EvalCommandOptions& o, const AudioLoader& loader = wav_loader()) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto entries = filter_split(parse_manifest(o.manifest), o.split);
  if (entries.empty()) throw DataError(o.manifest.string() + ": split '" + to_string(o.split) + "' is empty");
  const FeatureExtractor extractor(encoder_from_checkpoint(ck), checkpoint_backend(ck, o.backend));
  EvalOptions options;
  options.timing = o.timing;
  EvalResult result =
      evaluate(ck.model, std::span<const ManifestEntry>(entries), make_feature_source(extractor, loader), o.thresholds, options);
  std::filesystem::create_directories(o.out_dir);
  const std::string text = render_report(result.reports, ReportFormat::text);
  write_file_text(o.out_dir / "report.txt", text);
  write_file_text(o.out_dir / "report.csv", render_report(result.reports, ReportFormat::csv));
  write_file_text(o.out_dir / "report.jsonl", render_report(result.reports, ReportFormat::jsonl));
  if (!o.quiet) {
    std::cout << text;
    for (const auto& n : result.notes) std::cout << "note: " << n << '\n';
    if (o.timing) {
      std::printf("feature time (excluded from T_proc): %.3g s total\n", result.total_feature_time_s);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// filter

enum class FilterPolicy { any, tiered };

inline FilterPolicy parse_policy(const std::string& s) {
  if (s == "any") return FilterPolicy::any;
  if (s == "tiered") return FilterPolicy::tiered;
  throw ConfigError("unknown filter policy '" + s + "' (expected any or tiered)");
}

/// Classes a tiered filter routes to enhancement rather than discarding.
inline constexpr std::array<bool, kNumClasses> kEnhanceable = {false, true, false, true, false};

struct FilterDecision {
  ManifestEntry entry;
  std::array<double, kNumClasses> probs{};
  bool kept = true;
  std::string action = "keep";  // keep, enhance or discard
  std::vector<std::string> reasons;
};

/// Pure policy. A class flags when enabled and prob >= threshold. Under
/// `any`, a flag discards the entry. Under `tiered`, flags on noise or music
/// mark it for enhancement (still kept) and any other flag discards it.
inline FilterDecision decide(const ManifestEntry& entry, const std::array<double, kNumClasses>& probs,
                             const Thresholds& thresholds, const std::array<bool, kNumClasses>& enabled,
                             FilterPolicy policy) {
  FilterDecision d;
  d.entry = entry;
  d.probs = probs;
  bool discard = false, enhance = false;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!enabled[c] || probs[c] < thresholds[c]) continue;
    d.reasons.emplace_back(kClassNames[c]);
    if (policy == FilterPolicy::tiered && kEnhanceable[c]) {
      enhance = true;
    } else {
      discard = true;
    }
  }
  d.kept = !discard;
  d.action = discard ? "discard" : (enhance ? "enhance" : "keep");
  return d;
}

inline nlohmann::ordered_json decision_json(const FilterDecision& d, const Thresholds& thresholds,
                                            const std::array<bool, kNumClasses>& enabled, FilterPolicy policy) {
  nlohmann::ordered_json j;
  j["audio_path"] = d.entry.audio_path;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(kClassNames[c]);
    j["probs"][name] = d.probs[c];
    j["thresholds"][name] = thresholds[c];
    j["enabled"][name] = static_cast<bool>(enabled[c]);
  }
  j["policy"] = policy == FilterPolicy::any ? "any" : "tiered";
  j["kept"] = d.kept;
  j["action"] = d.action;
  j["reasons"] = d.reasons;
  return j;
}

struct FilterOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  Thresholds thresholds = {0.5, 0.5, 0.5, 0.5, 0.5};
  std::array<bool, kNumClasses> enabled = {true, true, true, true, true};
  FilterPolicy policy = FilterPolicy::any;
  std::optional<FeatureBackend> backend;
  std::filesystem::path out_dir;
  bool quiet = false;
};

struct FilterSummary {
  std::size_t total = 0, kept = 0, rejected = 0, enhance = 0;
};

/// Writes decisions from precomputed probabilities; shared by cmd_filter and tests.
inline FilterSummary write_filter_outputs(const std::filesystem::path& out_dir, const std::vector<ManifestEntry>& entries,
                                          const std::vector<std::array<double, kNumClasses>>& probs,
                                          const Thresholds& thresholds, const std::array<bool, kNumClasses>& enabled,
                                          FilterPolicy policy) {
  std::filesystem::create_directories(out_dir);
  std::ofstream kept(out_dir / "kept.jsonl", std::ios::trunc);
  std::ofstream rejected(out_dir / "rejected.jsonl", std::ios::trunc);
  std::ofstream decisions(out_dir / "decisions.jsonl", std::ios::trunc);
  std::ofstream enhance;
  if (policy == FilterPolicy::tiered) enhance.open(out_dir / "enhance.jsonl", std::ios::trunc);
  if (!kept || !rejected || !decisions || (policy == FilterPolicy::tiered && !enhance)) {
    throw DataError("cannot write filter outputs in " + out_dir.string());
  }
  FilterSummary s;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto d = decide(entries[i], probs[i], thresholds, enabled, policy);
    ++s.total;
    (d.kept ? kept : rejected) << manifest_line(entries[i]) << '\n';
    d.kept ? ++s.kept : ++s.rejected;
    if (d.action == "enhance") {
      enhance << manifest_line(entries[i]) << '\n';
      ++s.enhance;
    }
    decisions << decision_json(d, thresholds, enabled, policy).dump() << '\n';
  }
  return s;
}

inline FilterSummary cmd_filter(const FilterOptions& o, const AudioLoader& loader = wav_loader()) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto entries = parse_manifest(o.manifest);
  const FeatureExtractor extractor(encoder_from_checkpoint(ck), checkpoint_backend(ck, o.backend));
  const FeatureSource features = make_feature_source(extractor, loader);
  std::vector<std::array<double, kNumClasses>> probs;
  probs.reserve(entries.size());
  for (const auto& e : entries) {
    const Prediction p = ck.model.predict(features(e));
    std::array<double, kNumClasses> row{};
    std::copy_n(p.probs.begin(), kNumClasses, row.begin());
    probs.push_back(row);
  }
  const auto s = write_filter_outputs(o.out_dir, entries, probs, o.thresholds, o.enabled, o.policy);
  if (!o.quiet) {
    std::printf("%zu entries: %zu kept, %zu rejected", s.total, s.kept, s.rejected);
    if (o.policy == FilterPolicy::tiered) std::printf(" (%zu of the kept marked for enhancement)", s.enhance);
    std::printf("\n");
  }
  return s;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
  std::filesystem::path export_path;
  std::filesystem::path out_dir;
  std::array<double, 3> ratios = {0.857, 0.063, 0.080};  // train, val, test
  std::uint64_t seed = 0;
  bool quiet = false;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

/// train = round(r0 n), val = round(r1 n), test takes the remainder.
inline SplitSizes split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-6) throw ConfigError("split ratios must sum to 1");
  SplitSizes s;
  s.train = std::min(n, static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n))));
  s.val = std::min(n - s.train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
  s.test = n - s.train - s.val;
  return s;
}

/// Shuffles with the seed and assigns the first sizes.train entries to train,
/// the next sizes.val to val, the rest to test. Input order is kept within a split.
inline void assign_splits(std::vector<ManifestEntry>& entries, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const SplitSizes sizes = split_sizes(entries.size(), ratios);
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t k = 0; k < order.size(); ++k) {
    entries[order[k]].split = k < sizes.train ? Split::train : (k < sizes.train + sizes.val ? Split::val : Split::test);
  }
}

/// Per-class occurrence counts plus entries with no label set ("none").
inline nlohmann::ordered_json label_counts(const std::vector<ManifestEntry>& entries) {
  nlohmann::ordered_json j;
  j["entries"] = entries.size();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.labels.flags[c] ? 1 : 0;
    j[std::string(kClassNames[c])] = n;
  }
  std::size_t none = 0;
  for (const auto& e : entries) none += e.labels.any() ? 0 : 1;
  j["none"] = none;
  return j;
}

inline IngestResult cmd_ingest(const IngestOptions& o) {
  if (o.out_dir.empty()) throw ConfigError("--out is required");
  split_sizes(0, o.ratios);  // validates before any I/O
  IngestResult result = ingest_labelstudio(o.export_path);
  assign_splits(result.entries, o.ratios, o.seed);
  std::filesystem::create_directories(o.out_dir);
  nlohmann::ordered_json summary;
  summary["total"] = label_counts(result.entries);
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto part = filter_split(result.entries, s);
    write_manifest(o.out_dir / (std::string(to_string(s)) + ".jsonl"), part);
    summary[to_string(s)] = label_counts(part);
  }
  summary["skipped"] = result.warnings.size();
  summary["unmapped"] = result.unmapped.size();
  write_file_text(o.out_dir / "label_counts.json", summary.dump(2) + "\n");
  if (!o.quiet) {
    for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (!result.unmapped.empty()) std::fprintf(stderr, "warning: %zu tasks had no audio reference\n", result.unmapped.size());
    std::printf("%zu entries: %zu train, %zu val, %zu test\n", result.entries.size(),
                summary["train"]["entries"].get<std::size_t>(), summary["val"]["entries"].get<std::size_t>(),
                summary["test"]["entries"].get<std::size_t>());
  }
  return result;
}

}  // namespace whilter
