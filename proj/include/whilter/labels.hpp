#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "whilter/error.hpp"

namespace whilter {

inline constexpr std::size_t kNumClasses = 5;

/// Fixed output order of the classifier.
enum class ClassId : std::size_t { multispeaker = 0, music = 1, foreign = 2, noise = 3, synthetic = 4 };

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"multispeaker", "music", "foreign",
                                                                          "noise", "synthetic"};

inline std::size_t class_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == name) return i;
  throw ConfigError("unknown class '" + std::string(name) + "'");
}

struct LabelVector {
  std::array<bool, kNumClasses> flags{};
  std::optional<int> num_speakers;

  bool operator[](ClassId c) const { return flags[static_cast<std::size_t>(c)]; }
  bool& operator[](ClassId c) { return flags[static_cast<std::size_t>(c)]; }

  bool any() const {
    for (bool f : flags)
      if (f) return true;
    return false;
  }

  /// Speaker count, falling back to what the multispeaker flag implies.
  int speakers_or_default() const {
    return num_speakers ? *num_speakers : ((*this)[ClassId::multispeaker] ? 2 : 1);
  }

  /// Throws DataError if num_speakers contradicts the multispeaker flag.
  void validate() const {
    if (!num_speakers) return;
    if (*num_speakers < 0) throw DataError("num_speakers must be >= 0");
    if ((*num_speakers > 1) != (*this)[ClassId::multispeaker]) {
      throw DataError("num_speakers=" + std::to_string(*num_speakers) + " inconsistent with multispeaker=" +
                      ((*this)[ClassId::multispeaker] ? "1" : "0"));
    }
  }

  bool operator==(const LabelVector&) const = default;
};

}  // namespace whilter
