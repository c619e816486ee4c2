#pragma once

#include <map>
#include <string>
#include <vector>

namespace refseg::synthgen {

// Closed vocabulary of the template expressions. Index 0 is padding.
inline const std::vector<std::string>& vocabulary_words() {
  static const std::vector<std::string> words = {
      "<pad>", "the",    "red",  "green", "blue", "yellow", "circle",
      "square", "triangle", "moving", "left", "right", "up", "down"};
  return words;
}

inline int vocab_size() { return static_cast<int>(vocabulary_words().size()); }

inline int word_id(const std::string& w) {
  const auto& words = vocabulary_words();
  for (int i = 0; i < static_cast<int>(words.size()); ++i)
    if (words[i] == w) return i;
  return -1;
}

inline std::map<std::string, int> vocabulary_map() {
  std::map<std::string, int> m;
  const auto& words = vocabulary_words();
  for (int i = 0; i < static_cast<int>(words.size()); ++i) m[words[i]] = i;
  return m;
}

inline constexpr int kPadToken = 0;

}  // namespace refseg::synthgen
