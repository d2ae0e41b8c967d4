#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "whilter/audio.hpp"
#include "whilter/error.hpp"
#include "whilter/features.hpp"
#include "whilter/manifest.hpp"
#include "whilter/metrics.hpp"
#include "whilter/mixing.hpp"
#include "whilter/model.hpp"

namespace whilter {

/// Turns a manifest entry into the encoder stack the model consumes.
using FeatureSource = std::function<LayerStack(const ManifestEntry&)>;

/// File backend reads `<audio>.whlf`; mock backend loads and encodes the audio.
inline FeatureSource make_feature_source(const FeatureExtractor& extractor, AudioLoader loader = wav_loader()) {
  if (extractor.backend() == FeatureBackend::file) {
    return [&extractor](const ManifestEntry& e) { return extractor.load_sidecar(e.audio_path); };
  }
  return [&extractor, loader = std::move(loader)](const ManifestEntry& e) {
    Waveform w = loader(e);
    w.source_path = e.audio_path;
    return extractor.extract(pad_or_truncate(w, extractor.config().clip_samples()));
  };
}

struct ClassReport {
  std::string class_name;
  double fpr = 0.0;
  double fnr = 0.0;
  std::optional<double> eer;
  std::optional<double> eer_threshold;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::optional<double> mean_proc_time_s;
};

struct EvalOptions {
  // Wall-clock timing makes reports differ run to run; switch off for
  // reproducible output.
  bool timing = true;
};

struct EvalResult {
  std::vector<ClassReport> reports;
  std::vector<std::string> notes;
  std::vector<Prediction> predictions;  // one per entry, input order
  double total_proc_time_s = 0.0;       // forward passes only
  double total_feature_time_s = 0.0;    // feature loading or mock encoding
};

/// Metrics for one class at a fixed threshold, plus EER when defined.
inline ClassReport class_report(const ScoredSet& s, double threshold, std::vector<std::string>* notes = nullptr) {
  ClassReport r;
  r.class_name = s.class_name;
  r.threshold = threshold;
  const auto counts = confusion_counts(s, threshold);
  r.n_pos = counts.tp + counts.fn;
  r.n_neg = counts.fp + counts.tn;
  r.fpr = false_positive_rate(counts);
  r.fnr = false_negative_rate(counts);
  const auto prf = precision_recall_f1(counts);
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  if (r.n_pos > 0 && r.n_neg > 0) {
    const auto e = equal_error_rate(s);
    r.eer = e.eer;
    r.eer_threshold = e.threshold;
  } else if (notes) {
    notes->push_back("class '" + s.class_name + "': EER omitted (" + (r.n_pos == 0 ? "no positives" : "no negatives") +
                     ")");
  }
  return r;
}

/// Scores every entry and builds one report per class, in class order.
template <std::floating_point T>
EvalResult evaluate(const Model<T>& model, std::span<const ManifestEntry> entries, const FeatureSource& features,
                    std::span<const double> thresholds, const EvalOptions& options = {}) {
  if (entries.empty()) throw DataError("evaluate: empty split");
  if (thresholds.size() != kNumClasses) throw ConfigError("evaluate: expected one threshold per class");
  using clock = std::chrono::steady_clock;
  EvalResult out;
  std::array<ScoredSet, kNumClasses> sets;
  for (std::size_t c = 0; c < kNumClasses; ++c) sets[c].class_name = std::string(kClassNames[c]);
  for (const auto& e : entries) {
    const auto f0 = clock::now();
    const LayerStack stack = features(e);
    const auto t0 = clock::now();
    Prediction p = model.predict(stack);
    const auto t1 = clock::now();
    out.total_feature_time_s += std::chrono::duration<double>(t0 - f0).count();
    out.total_proc_time_s += std::chrono::duration<double>(t1 - t0).count();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      sets[c].scores.push_back(p.probs[c]);
      sets[c].labels.push_back(e.labels.flags[c]);
    }
    out.predictions.push_back(std::move(p));
  }
  const double mean_time = out.total_proc_time_s / static_cast<double>(entries.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassReport r = class_report(sets[c], thresholds[c], &out.notes);
    if (options.timing) r.mean_proc_time_s = mean_time;
    out.reports.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

enum class ReportFormat { text, csv, jsonl };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "jsonl") return ReportFormat::jsonl;
  throw ConfigError("unknown report format '" + s + "'");
}

inline constexpr const char* kEmptyCell = "—";
inline constexpr std::array<const char*, 12> kReportColumns = {
    "class", "FPR%", "FNR%", "EER%", "Prec%", "Rec%", "F1%", "T_proc", "threshold", "eer_threshold", "n_pos", "n_neg"};

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string pct(std::optional<double> v) { return v ? fmt("%.1f", *v * 100.0) : kEmptyCell; }
inline std::string secs(std::optional<double> v) { return v ? fmt("%.3g", *v) : kEmptyCell; }
inline std::string real(std::optional<double> v) { return v ? fmt("%.6g", *v) : kEmptyCell; }

inline std::vector<std::string> report_cells(const ClassReport& r) {
  return {r.class_name,        pct(r.fpr),       pct(r.fnr),       pct(r.eer),
          pct(r.precision),    pct(r.recall),    pct(r.f1),        secs(r.mean_proc_time_s),
          real(r.threshold),   real(r.eer_threshold), std::to_string(r.n_pos), std::to_string(r.n_neg)};
}

// UTF-8 aware display width; enough for the em dash placeholder.
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s)
    if ((ch & 0xC0) != 0x80) ++n;
  return n;
}

}  // namespace detail

/// Renders reports; the first eight columns are fixed as
/// class, FPR%, FNR%, EER%, Prec%, Rec%, F1%, T_proc.
inline std::string render_report(const std::vector<ClassReport>& reports, ReportFormat format) {
  if (reports.empty()) throw std::invalid_argument("render_report: no reports");
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    for (std::size_t i = 0; i < kReportColumns.size(); ++i) out << (i ? "," : "") << kReportColumns[i];
    out << '\n';
    for (const auto& r : reports) {
      const auto cells = detail::report_cells(r);
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << '\n';
    }
  } else if (format == ReportFormat::jsonl) {
    for (const auto& r : reports) {
      const auto cells = detail::report_cells(r);
      nlohmann::ordered_json j;
      for (std::size_t i = 0; i < cells.size(); ++i) j[kReportColumns[i]] = cells[i];
      out << j.dump() << '\n';
    }
  } else {
    std::vector<std::vector<std::string>> rows;
    rows.emplace_back(kReportColumns.begin(), kReportColumns.end());
    for (const auto& r : reports) rows.push_back(detail::report_cells(r));
    std::vector<std::size_t> width(kReportColumns.size(), 0);
    for (const auto& row : rows)
      for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], detail::display_width(row[i]));
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const std::size_t pad = width[i] - detail::display_width(row[i]);
        if (i == 0) {
          out << row[i] << std::string(pad, ' ');
        } else {
          out << "  " << std::string(pad, ' ') << row[i];
        }
      }
      out << '\n';
    }
  }
  return out.str();
}

/// One parsed CSV report row: the class name and the remaining cells,
/// with empty-metric cells as nullopt.
struct ReportRow {
  std::string class_name;
  std::vector<std::optional<double>> values;

  bool operator==(const ReportRow&) const = default;
};

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("report CSV: missing header");
  std::string expected;
  for (std::size_t i = 0; i < kReportColumns.size(); ++i) expected += (i ? "," : "") + std::string(kReportColumns[i]);
  if (line != expected) throw DataError("report CSV: unexpected header '" + line + "'");
  std::vector<ReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != kReportColumns.size()) {
      throw DataError("report CSV: line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                      " cells");
    }
    ReportRow row;
    row.class_name = cells[0];
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i] == kEmptyCell) {
        row.values.push_back(std::nullopt);
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[i], &used);
        if (used != cells[i].size()) throw std::invalid_argument("trailing");
        row.values.push_back(v);
      } catch (const std::exception&) {
        throw DataError("report CSV: line " + std::to_string(lineno) + ": bad number '" + cells[i] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace whilter
