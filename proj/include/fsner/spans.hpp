#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsner/data.hpp"

namespace fsner {

// Inclusive token range carrying one entity class.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string cls;

  friend auto operator<=>(const Span&, const Span&) = default;
};

// Maximal runs of identical I-class tags; a class change starts a new span.
std::vector<Span> extract_spans(std::span<const Tag> tags);

// Inverse of extract_spans for non-overlapping spans within `length` tokens.
std::vector<Tag> tags_from_spans(std::span<const Span> spans, std::size_t length);

}  // namespace fsner
