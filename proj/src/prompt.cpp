#include "fsner/prompt.hpp"

#include <algorithm>

#include "fsner/error.hpp"

namespace fsner {

LabelPrompt build_label_prompt(const LabelSet& labels, const LabelMap& label_map) {
  if (labels.entity_classes().empty()) throw DataError("cannot build a label prompt for an empty label set");
  label_map.require_covers(labels);
  LabelPrompt prompt;
  for (const auto& cls : labels.all_classes()) {
    prompt.rep_positions.push_back(prompt.tokens.size());
    prompt.tokens.emplace_back(Vocabulary::kClsToken);
    for (auto& w : label_map.words(cls)) prompt.tokens.push_back(std::move(w));
    prompt.classes.push_back(cls);
  }
  return prompt;
}

InputSequence assemble_input(const Sentence& sentence, const LabelPrompt& prompt, const Vocabulary& vocab,
                             std::size_t max_len) {
  constexpr std::size_t kSpecials = 3;
  if (prompt.size() + kSpecials > max_len) {
    throw DataError("label prompt of " + std::to_string(prompt.size()) + " tokens does not fit max_len " +
                    std::to_string(max_len));
  }
  const std::size_t budget = max_len - prompt.size() - kSpecials;
  const std::size_t kept = std::min(sentence.size(), budget);

  InputSequence in;
  in.max_len = max_len;
  in.classes = prompt.classes;
  in.truncated = sentence.size() - kept;
  in.ids.reserve(max_len);
  in.ids.push_back(Vocabulary::kCls);
  for (std::size_t i = 0; i < kept; ++i) {
    in.context_positions.push_back(in.ids.size());
    in.ids.push_back(vocab.id(sentence.tokens[i]));
    const Tag& tag = sentence.tags[i];
    auto it = std::find(prompt.classes.begin(), prompt.classes.end(), tag.class_name());
    if (it == prompt.classes.end()) {
      throw DataError("gold class '" + std::string(tag.class_name()) + "' has no label prompt entry");
    }
    in.gold_tags.push_back(tag);
    in.gold_class.push_back(static_cast<std::size_t>(it - prompt.classes.begin()));
  }
  in.ids.push_back(Vocabulary::kSep);
  const std::size_t prompt_start = in.ids.size();
  for (const auto& tok : prompt.tokens) in.ids.push_back(vocab.id(tok));
  for (auto rel : prompt.rep_positions) in.label_rep_index.push_back(prompt_start + rel);
  in.ids.push_back(Vocabulary::kSep);
  in.occupied = in.ids.size();
  in.ids.resize(max_len, Vocabulary::kPad);

  in.attention_mask.assign(max_len, 0);
  std::fill_n(in.attention_mask.begin(), in.occupied, std::uint8_t{1});
  in.context_mask.assign(max_len, 0);
  for (auto p : in.context_positions) in.context_mask[p] = 1;
  return in;
}

}  // namespace fsner
