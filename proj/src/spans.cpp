#include "fsner/spans.hpp"

#include "fsner/error.hpp"

namespace fsner {

std::vector<Span> extract_spans(std::span<const Tag> tags) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (!tags[i].is_entity()) continue;
    if (!spans.empty() && spans.back().end + 1 == i && spans.back().cls == tags[i].cls) {
      spans.back().end = i;
    } else {
      spans.push_back({i, i, tags[i].cls});
    }
  }
  return spans;
}

std::vector<Tag> tags_from_spans(std::span<const Span> spans, std::size_t length) {
  std::vector<Tag> tags(length);
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= length || s.cls.empty()) {
      throw DataError("invalid span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                      "] for length " + std::to_string(length));
    }
    for (std::size_t i = s.start; i <= s.end; ++i) tags[i] = Tag::inside(s.cls);
  }
  return tags;
}

}  // namespace fsner
