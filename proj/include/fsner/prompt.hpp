#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fsner/data.hpp"

namespace fsner {

inline constexpr std::size_t kDefaultMaxLen = 128;

// Suffix prompt: for each class (entity classes in label-set order, O last)
// a [CLS] token followed by the class phrase. Each [CLS] stands for its class.
struct LabelPrompt {
  std::vector<std::string> tokens;
  std::vector<std::size_t> rep_positions;  // relative to the prompt start
  std::vector<std::string> classes;

  std::size_t size() const noexcept { return tokens.size(); }
};

LabelPrompt build_label_prompt(const LabelSet& labels, const LabelMap& label_map);

// Model input laid out as [CLS] context [SEP] prompt [SEP] [PAD]...
struct InputSequence {
  std::vector<std::int32_t> ids;            // length max_len
  std::vector<std::uint8_t> attention_mask;  // 1 on occupied positions
  std::vector<std::uint8_t> context_mask;    // 1 on context tokens only
  std::vector<std::size_t> context_positions;
  std::vector<std::size_t> label_rep_index;  // absolute position per class
  std::vector<std::string> classes;          // same order as label_rep_index
  std::vector<Tag> gold_tags;                // per kept context token
  std::vector<std::size_t> gold_class;       // index into classes per kept token
  std::size_t occupied = 0;
  std::size_t max_len = 0;
  std::size_t truncated = 0;  // context tokens dropped from the right
};

// Context is truncated from the right to fit; the prompt never is. Throws
// DataError when the prompt plus the three specials exceed max_len or when a
// gold tag's class has no prompt entry.
InputSequence assemble_input(const Sentence& sentence, const LabelPrompt& prompt, const Vocabulary& vocab,
                             std::size_t max_len = kDefaultMaxLen);

}  // namespace fsner
