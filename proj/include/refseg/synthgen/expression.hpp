#pragma once

#include <string>
#include <vector>

#include "refseg/core/errors.hpp"
#include "refseg/synthgen/types.hpp"
#include "refseg/synthgen/vocab.hpp"

namespace refseg::synthgen {

// "the <color> <shape> moving <direction>", or "the <color> <shape>" for a
// static referent.
inline std::vector<std::string> build_expression_words(const ShapeSpec& spec) {
  std::vector<std::string> words = {"the", to_word(spec.color), to_word(spec.kind)};
  if (spec.motion != Motion::still) {
    words.emplace_back("moving");
    words.emplace_back(to_word(spec.motion));
  }
  return words;
}

inline std::vector<int> build_expression(const ShapeSpec& spec) {
  std::vector<int> ids;
  for (const auto& w : build_expression_words(spec)) {
    const int id = word_id(w);
    if (id < 0) throw GenerationError("expression word outside vocabulary: " + w);
    ids.push_back(id);
  }
  return ids;
}

}  // namespace refseg::synthgen
