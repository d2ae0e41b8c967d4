#pragma once

#include <map>
#include <sstream>
#include <string>

#include "whilter/error.hpp"

namespace whilter {

/// Sectioned key=value text: `[section]` headers, `#` comments. Keys before
/// the first header land in section "".
using KvSections = std::map<std::string, std::map<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KvSections parse_kv(const std::string& text, const std::string& name) {
  KvSections out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(name + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key=value");
    out[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::string render_kv(const KvSections& sections) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, kv] : sections) {
    if (!section.empty()) os << (first ? "" : "\n") << '[' << section << "]\n";
    for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
    first = false;
  }
  return os.str();
}

}  // namespace whilter
