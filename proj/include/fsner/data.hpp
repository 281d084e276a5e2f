#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsner/error.hpp"

namespace fsner {

inline constexpr std::string_view kOutside = "O";

// IO tag: either O (empty class) or I-<class>.
struct Tag {
  std::string cls;

  static Tag outside() { return {}; }
  static Tag inside(std::string cls) { return {std::move(cls)}; }
  // Accepts O, B-X, I-X and the BIOES/BILOU prefixes (all collapse to I-X),
  // and bare class names as used by FEW-NERD.
  static Tag parse(std::string_view raw);

  bool is_entity() const noexcept { return !cls.empty(); }
  // Class name with "O" for outside.
  std::string_view class_name() const noexcept { return cls.empty() ? kOutside : std::string_view(cls); }
  std::string str() const { return cls.empty() ? std::string(kOutside) : "I-" + cls; }

  friend bool operator==(const Tag&, const Tag&) = default;
};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<Tag> tags;

  std::size_t size() const noexcept { return tokens.size(); }
};

enum class DomainRole { Source, Target };

// Ordered entity classes plus the implicit O class, which always sorts last.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> entity_classes, DomainRole role = DomainRole::Source);

  // Sorted set of entity classes appearing in the sentences.
  static LabelSet from_sentences(std::span<const Sentence> sentences,
                                 DomainRole role = DomainRole::Source);

  const std::vector<std::string>& entity_classes() const noexcept { return classes_; }
  // Entity classes followed by "O".
  std::vector<std::string> all_classes() const;
  std::size_t class_count() const noexcept { return classes_.size() + 1; }
  bool contains(std::string_view cls) const;
  // Position in all_classes().
  std::optional<std::size_t> index_of(std::string_view cls) const;
  DomainRole role() const noexcept { return role_; }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> classes_;
  DomainRole role_ = DomainRole::Source;
};

bool disjoint(const LabelSet& a, const LabelSet& b);

// class name -> natural-language phrase. O falls back to "other".
class LabelMap {
 public:
  void set(std::string cls, std::string phrase);
  bool covers(std::string_view cls) const;
  const std::string& phrase(std::string_view cls) const;
  std::vector<std::string> words(std::string_view cls) const;
  std::vector<std::string> missing(const LabelSet& labels) const;
  // DataError listing every uncovered class.
  void require_covers(const LabelSet& labels) const;
  // Fill uncovered classes with derive_label_phrase().
  void fill_missing(const LabelSet& labels);

  const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return entries_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::map<std::string, std::string, std::less<>> entries_;
};

// Heuristic phrase for hierarchical names such as "person-artist/author"
// ("artist") or "location-other" ("location"); flat names lowercase.
std::string derive_label_phrase(std::string_view cls);

// `class = phrase` lines; `#` starts a comment.
LabelMap parse_label_map(std::string_view text);
LabelMap load_label_map(const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path, const LabelSet& labels);

struct Episode {
  std::vector<Sentence> support;
  std::vector<Sentence> query;
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::vector<std::string> types;
};

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kClsToken = "[CLS]";
  static constexpr std::string_view kSepToken = "[SEP]";

  explicit Vocabulary(bool lowercase = true);
  // Rebuilds a vocabulary from its id-ordered token list (reserved first).
  static Vocabulary from_tokens(std::vector<std::string> tokens, bool lowercase);

  std::int32_t add(std::string_view token);
  std::int32_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  bool lowercase() const noexcept { return lowercase_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::string normalize(std::string_view token) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.lowercase_ == b.lowercase_ && a.tokens_ == b.tokens_;
  }

 private:
  bool lowercase_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

// Tokens with frequency >= min_count, ordered by descending frequency then
// lexicographically. Label-map phrase words are always included.
Vocabulary build_vocab(std::span<const Sentence> sentences, std::size_t min_count,
                       const LabelMap* label_map = nullptr, bool lowercase = true);

// CoNLL column format. The first column is the token and the last column is
// the tag; B-X is normalized to I-X. -DOCSTART- lines are skipped.
std::vector<Sentence> parse_conll(std::string_view text);
std::vector<Sentence> read_conll(const std::filesystem::path& path);
std::string to_conll(std::span<const Sentence> sentences);
void write_conll(std::span<const Sentence> sentences, const std::filesystem::path& path);

// One JSON record per line with support/query word and label arrays and the
// episode's entity types.
std::vector<Episode> parse_fewnerd_episodes(std::string_view text);
std::vector<Episode> read_fewnerd_episodes(const std::filesystem::path& path);
std::string episode_to_json_line(const Episode& episode);

struct SupportSample {
  std::vector<std::size_t> indices;  // into the corpus, in selection order
  std::vector<Sentence> sentences;
  std::vector<std::string> classes;  // the N sampled classes
  std::map<std::string, std::size_t> counts;  // entity mentions per class
  bool overshoot = false;  // some count exceeds the upper bound
};

// Greedy N-way K-shot sampling over a seed-shuffled corpus. Counts are entity
// mentions. A sentence is accepted only if it helps a class still below K
// and keeps every class at or below 2K (K when strict_k). When the label set
// has more than N classes, N of them are drawn with the same seed.
SupportSample greedy_sample_support(std::span<const Sentence> sentences, const LabelSet& labels,
                                    std::size_t n_way, std::size_t k_shot, std::uint64_t seed,
                                    bool strict_k = false);

}  // namespace fsner
