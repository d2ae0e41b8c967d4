#pragma once

// Label Studio export ingestion. Two layouts are accepted, both a top-level
// JSON array of tasks:
//
//  * full export: {"id": 7, "data": {"audio": "..."},
//                  "annotations": [{"result": [
//                     {"from_name": "num_speakers", "value": {"number": 2}},
//                     {"from_name": "music", "value": {"choices": ["1"]}}, ...]}]}
//  * JSON-MIN export: {"id": 7, "audio": "...", "num_speakers": 2, "music": 1, ...}
//
// The audio reference is read from "audio", "audio_path" or "audio_url". The
// boolean fields are music, foreign, noise and synthetic; an absent boolean
// means the annotator did not tick it (false). Tasks without a speaker count
// are skipped with a warning; tasks without an audio reference are reported as
// unmapped.

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "whilter/error.hpp"
#include "whilter/fileio.hpp"
#include "whilter/manifest.hpp"

namespace whilter {

struct IngestResult {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;
  std::vector<std::string> unmapped;  // task ids that could not be mapped
};

namespace detail {

inline std::optional<bool> ls_bool(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0.0;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "1" || s == "true" || s == "True" || s == "yes" || s == "Yes") return true;
    if (s == "0" || s == "false" || s == "False" || s == "no" || s == "No") return false;
    return std::nullopt;
  }
  if (v.is_array()) {
    if (v.empty()) return false;
    return ls_bool(v.front());
  }
  if (v.is_object()) {
    for (const char* key : {"choices", "number", "rating", "value"}) {
      if (auto it = v.find(key); it != v.end()) return ls_bool(*it);
    }
  }
  return std::nullopt;
}

inline std::optional<int> ls_int(const nlohmann::json& v) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<int>(d)) return static_cast<int>(d);
    return std::nullopt;
  }
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(v.get<std::string>(), &used);
      if (used == v.get<std::string>().size()) return n;
    } catch (const std::exception&) {
    }
    return std::nullopt;
  }
  if (v.is_array() && !v.empty()) return ls_int(v.front());
  if (v.is_object()) {
    for (const char* key : {"number", "choices", "rating", "value"}) {
      if (auto it = v.find(key); it != v.end()) return ls_int(*it);
    }
  }
  return std::nullopt;
}

inline std::string task_id(const nlohmann::json& task, std::size_t index) {
  if (auto it = task.find("id"); it != task.end() && !it->is_null()) {
    return it->is_string() ? it->get<std::string>() : it->dump();
  }
  return "#" + std::to_string(index);
}

}  // namespace detail

inline IngestResult ingest_labelstudio_json(const std::string& text, const std::string& name) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(name + ": parse error at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!root.is_array()) throw DataError(name + ": expected a JSON array of tasks");

  IngestResult out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& task = root[i];
    const std::string id = detail::task_id(task, i);
    if (!task.is_object()) {
      out.unmapped.push_back(id);
      continue;
    }
    // Collect field values from either layout.
    nlohmann::json fields = nlohmann::json::object();
    const nlohmann::json* data = &task;
    if (auto it = task.find("data"); it != task.end() && it->is_object()) data = &*it;
    for (const char* key : {"audio", "audio_path", "audio_url"}) {
      if (auto it = data->find(key); it != data->end() && it->is_string()) {
        fields["audio"] = *it;
        break;
      }
    }
    if (auto ann = task.find("annotations"); ann != task.end() && ann->is_array() && !ann->empty()) {
      const auto& first = ann->front();
      if (auto result = first.find("result"); result != first.end() && result->is_array()) {
        for (const auto& r : *result) {
          if (!r.is_object() || !r.contains("value") || !r.contains("from_name") || !r["from_name"].is_string()) continue;
          fields[r["from_name"].get<std::string>()] = r["value"];
        }
      }
    } else {
      for (auto it = task.begin(); it != task.end(); ++it) {
        if (it.key() != "data" && !fields.contains(it.key())) fields[it.key()] = it.value();
      }
    }

    if (!fields.contains("audio")) {
      out.unmapped.push_back(id);
      continue;
    }
    ManifestEntry entry;
    entry.audio_path = fields["audio"].get<std::string>();
    entry.source = "labelstudio";
    std::optional<int> speakers;
    if (fields.contains("num_speakers")) speakers = detail::ls_int(fields["num_speakers"]);
    if (!speakers || *speakers < 0) {
      out.warnings.push_back("task " + id + ": missing speaker count, skipped");
      continue;
    }
    entry.labels.num_speakers = *speakers;
    entry.labels[ClassId::multispeaker] = *speakers > 1;
    bool ok = true;
    for (ClassId c : {ClassId::music, ClassId::foreign, ClassId::noise, ClassId::synthetic}) {
      const std::string key(kClassNames[static_cast<std::size_t>(c)]);
      if (!fields.contains(key)) continue;
      auto v = detail::ls_bool(fields[key]);
      if (!v) {
        out.warnings.push_back("task " + id + ": unreadable value for '" + key + "', skipped");
        ok = false;
        break;
      }
      entry.labels[c] = *v;
    }
    if (!ok) continue;
    if (!seen.insert(entry.audio_path).second) {
      out.warnings.push_back("task " + id + ": duplicate audio reference " + entry.audio_path + ", skipped");
      continue;
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

inline IngestResult ingest_labelstudio(const std::filesystem::path& export_path) {
  return ingest_labelstudio_json(read_file_text(export_path), export_path.string());
}

}  // namespace whilter
