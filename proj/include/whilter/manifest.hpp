#pragma once

// JSON Lines manifest, one object per line:
//   {"audio_path": "clips/a.wav", "split": "train", "source": "emilia", "duration_s": 4.2,
//    "labels": {"multispeaker": 0, "music": 1, "foreign": 0, "noise": 0, "synthetic": 0,
//               "num_speakers": 1}}
// Label values may be 0/1 or true/false; num_speakers is optional. split
// defaults to "train", source to "" and duration_s to 0 when absent.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "whilter/error.hpp"
#include "whilter/labels.hpp"

namespace whilter {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("bad split value '" + s + "' (expected train, val or test)");
}

struct ManifestEntry {
  std::string audio_path;
  LabelVector labels;
  Split split = Split::train;
  std::string source;
  double duration_s = 0.0;

  bool operator==(const ManifestEntry&) const = default;
};

inline nlohmann::ordered_json labels_to_json(const LabelVector& y) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < kNumClasses; ++i) j[std::string(kClassNames[i])] = y.flags[i] ? 1 : 0;
  if (y.num_speakers) j["num_speakers"] = *y.num_speakers;
  return j;
}

inline nlohmann::ordered_json entry_to_json(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["audio_path"] = e.audio_path;
  j["split"] = to_string(e.split);
  j["source"] = e.source;
  j["duration_s"] = e.duration_s;
  j["labels"] = labels_to_json(e.labels);
  return j;
}

namespace detail {

inline bool json_flag(const nlohmann::json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() || v.is_number_unsigned()) {
    const auto n = v.get<long long>();
    if (n == 0 || n == 1) return n == 1;
  }
  throw DataError("label '" + key + "' must be 0/1 or a boolean");
}

}  // namespace detail

/// Converts one parsed object; errors carry no location (callers prefix it).
inline ManifestEntry entry_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("expected a JSON object");
  ManifestEntry e;
  auto path = j.find("audio_path");
  if (path == j.end() || !path->is_string() || path->get<std::string>().empty()) {
    throw DataError("missing audio_path");
  }
  e.audio_path = path->get<std::string>();
  if (auto s = j.find("split"); s != j.end()) {
    if (!s->is_string()) throw DataError("bad split value");
    e.split = parse_split(s->get<std::string>());
  }
  if (auto s = j.find("source"); s != j.end() && s->is_string()) e.source = s->get<std::string>();
  if (auto d = j.find("duration_s"); d != j.end()) {
    if (!d->is_number()) throw DataError("duration_s must be a number");
    e.duration_s = d->get<double>();
  }
  auto labels = j.find("labels");
  if (labels == j.end() || !labels->is_object()) throw DataError("missing labels object");
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const std::string key(kClassNames[i]);
    auto v = labels->find(key);
    if (v == labels->end()) throw DataError("missing label '" + key + "'");
    e.labels.flags[i] = detail::json_flag(*v, key);
  }
  if (auto n = labels->find("num_speakers"); n != labels->end() && !n->is_null()) {
    if (!n->is_number_integer() && !n->is_number_unsigned()) throw DataError("num_speakers must be an integer");
    e.labels.num_speakers = n->get<int>();
  }
  e.labels.validate();
  return e;
}

inline std::vector<ManifestEntry> parse_manifest_stream(std::istream& in, const std::string& name) {
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ": line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    ManifestEntry entry;
    try {
      entry = entry_from_json(j);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (!seen.insert(entry.audio_path).second) throw DataError(where + "duplicate audio_path " + entry.audio_path);
    entries.push_back(std::move(entry));
  }
  return entries;
}

inline std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest_stream(in, path.string());
}

inline std::string manifest_line(const ManifestEntry& e) {
  try {
    return entry_to_json(e).dump();
  } catch (const nlohmann::json::type_error&) {
    throw DataError("audio_path or source is not valid UTF-8: " + e.audio_path);
  }
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : entries) out << manifest_line(e) << '\n';
}

inline std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

}  // namespace whilter
