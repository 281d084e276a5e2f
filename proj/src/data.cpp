#include "fsner/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "fsner/error.hpp"
#include "fsner/spans.hpp"
#include "json.hpp"

namespace fsner {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

// --- Tag --------------------------------------------------------------------

Tag Tag::parse(std::string_view raw) {
  raw = trim(raw);
  if (raw.empty()) throw DataError("empty tag");
  if (raw == kOutside) return outside();
  if (raw.size() > 2 && raw[1] == '-' && std::string_view("BIESLU").find(raw[0]) != std::string_view::npos) {
    return inside(std::string(raw.substr(2)));
  }
  return inside(std::string(raw));
}

// --- LabelSet ---------------------------------------------------------------

LabelSet::LabelSet(std::vector<std::string> entity_classes, DomainRole role)
    : classes_(std::move(entity_classes)), role_(role) {
  std::set<std::string_view> seen;
  for (const auto& c : classes_) {
    if (c.empty()) throw DataError("label set contains an empty class name");
    if (c == kOutside) throw DataError("O is implicit and cannot be listed as an entity class");
    if (!seen.insert(c).second) throw DataError("duplicate class in label set: " + c);
  }
}

LabelSet LabelSet::from_sentences(std::span<const Sentence> sentences, DomainRole role) {
  std::set<std::string> classes;
  for (const auto& s : sentences) {
    for (const auto& t : s.tags) {
      if (t.is_entity()) classes.insert(t.cls);
    }
  }
  return LabelSet({classes.begin(), classes.end()}, role);
}

std::vector<std::string> LabelSet::all_classes() const {
  auto all = classes_;
  all.emplace_back(kOutside);
  return all;
}

bool LabelSet::contains(std::string_view cls) const { return index_of(cls).has_value(); }

std::optional<std::size_t> LabelSet::index_of(std::string_view cls) const {
  if (cls == kOutside) return classes_.size();
  auto it = std::find(classes_.begin(), classes_.end(), cls);
  if (it == classes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classes_.begin());
}

bool disjoint(const LabelSet& a, const LabelSet& b) {
  return std::none_of(a.entity_classes().begin(), a.entity_classes().end(),
                      [&](const std::string& c) { return b.contains(c); });
}

// --- LabelMap ---------------------------------------------------------------

namespace {
const std::string kDefaultOutsidePhrase = "other";
}

void LabelMap::set(std::string cls, std::string phrase) {
  auto p = trim(phrase);
  if (cls.empty()) throw DataError("label map entry with empty class name");
  if (p.empty()) throw DataError("label map entry for '" + cls + "' has an empty phrase");
  entries_[std::move(cls)] = std::string(p);
}

bool LabelMap::covers(std::string_view cls) const {
  return cls == kOutside || entries_.find(cls) != entries_.end();
}

const std::string& LabelMap::phrase(std::string_view cls) const {
  auto it = entries_.find(cls);
  if (it != entries_.end()) return it->second;
  if (cls == kOutside) return kDefaultOutsidePhrase;
  throw DataError("label map has no phrase for class '" + std::string(cls) + "'");
}

std::vector<std::string> LabelMap::words(std::string_view cls) const {
  std::vector<std::string> out;
  for (auto w : split_ws(phrase(cls))) out.emplace_back(w);
  return out;
}

std::vector<std::string> LabelMap::missing(const LabelSet& labels) const {
  std::vector<std::string> out;
  for (const auto& c : labels.entity_classes()) {
    if (!covers(c)) out.push_back(c);
  }
  return out;
}

void LabelMap::require_covers(const LabelSet& labels) const {
  auto miss = missing(labels);
  if (miss.empty()) return;
  std::string msg = "label map does not cover classes:";
  for (const auto& m : miss) msg += " " + m;
  throw DataError(msg);
}

void LabelMap::fill_missing(const LabelSet& labels) {
  for (const auto& c : missing(labels)) set(c, derive_label_phrase(c));
}

std::string derive_label_phrase(std::string_view cls) {
  std::string_view coarse = cls;
  std::string_view fine;
  if (auto dash = cls.find('-'); dash != std::string_view::npos) {
    coarse = cls.substr(0, dash);
    fine = cls.substr(dash + 1);
  }
  std::string_view pick = fine.empty() ? coarse : fine;
  if (auto slash = pick.find('/'); slash != std::string_view::npos) pick = pick.substr(0, slash);
  if (pick == "other" && !fine.empty()) pick = coarse;
  std::string out;
  for (char c : pick) {
    if (c == '_') {
      out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

LabelMap parse_label_map(std::string_view text) {
  LabelMap map;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("label map line " + std::to_string(line_no) + ": expected 'class = phrase'");
    }
    auto cls = trim(line.substr(0, eq));
    auto phrase = trim(line.substr(eq + 1));
    if (cls.empty() || phrase.empty()) {
      throw DataError("label map line " + std::to_string(line_no) + ": empty class or phrase");
    }
    map.set(std::string(cls), std::string(phrase));
  }
  return map;
}

LabelMap load_label_map(const std::filesystem::path& path) { return parse_label_map(read_file(path)); }

LabelMap load_label_map(const std::filesystem::path& path, const LabelSet& labels) {
  auto map = load_label_map(path);
  map.require_covers(labels);
  return map;
}

// --- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary(bool lowercase) : lowercase_(lowercase) {
  for (auto t : {kPadToken, kUnkToken, kClsToken, kSepToken}) {
    ids_.emplace(std::string(t), static_cast<std::int32_t>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, bool lowercase) {
  Vocabulary v(lowercase);
  if (tokens.size() < 4 || tokens[0] != kPadToken || tokens[1] != kUnkToken || tokens[2] != kClsToken ||
      tokens[3] != kSepToken) {
    throw DataError("vocabulary must start with the reserved tokens");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.contains(tokens[i]) || v.normalize(tokens[i]) != tokens[i]) {
      throw DataError("vocabulary token '" + tokens[i] + "' is duplicated or not normalized");
    }
    v.add(tokens[i]);
  }
  return v;
}

std::string Vocabulary::normalize(std::string_view token) const {
  std::string out(token);
  if (!lowercase_) return out;
  if (token == kPadToken || token == kUnkToken || token == kClsToken || token == kSepToken) return out;
  for (auto& c : out) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::int32_t Vocabulary::add(std::string_view token) {
  auto norm = normalize(token);
  if (auto it = ids_.find(norm); it != ids_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  ids_.emplace(norm, id);
  tokens_.push_back(std::move(norm));
  return id;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(normalize(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(normalize(token)) > 0; }

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(std::span<const Sentence> sentences, std::size_t min_count,
                       const LabelMap* label_map, bool lowercase) {
  if (min_count < 1) throw UsageError("min_count must be at least 1");
  Vocabulary vocab(lowercase);
  std::map<std::string, std::size_t> freq;
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) ++freq[vocab.normalize(t)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : ranked) {
    if (n >= min_count) vocab.add(tok);
  }
  if (label_map) {
    std::set<std::string> words;
    for (const auto& [cls, phrase] : label_map->entries()) {
      for (auto w : split_ws(phrase)) words.insert(vocab.normalize(w));
    }
    for (auto w : split_ws(label_map->phrase(kOutside))) words.insert(vocab.normalize(w));
    for (const auto& w : words) vocab.add(w);
  }
  return vocab;
}

// --- CoNLL ------------------------------------------------------------------

std::vector<Sentence> parse_conll(std::string_view text) {
  std::vector<Sentence> out;
  Sentence current;
  auto flush = [&] {
    if (!current.tokens.empty()) out.push_back(std::move(current));
    current = Sentence{};
  };
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) {
      flush();
      continue;
    }
    auto fields = split_ws(line);
    if (fields.front().starts_with("-DOCSTART-")) continue;
    if (fields.size() < 2) {
      throw DataError("CoNLL line " + std::to_string(line_no) + ": expected 'token<TAB>tag', got '" +
                      std::string(line) + "'");
    }
    current.tokens.emplace_back(fields.front());
    try {
      current.tags.push_back(Tag::parse(fields.back()));
    } catch (const DataError& e) {
      throw DataError("CoNLL line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  flush();
  return out;
}

std::vector<Sentence> read_conll(const std::filesystem::path& path) { return parse_conll(read_file(path)); }

std::string to_conll(std::span<const Sentence> sentences) {
  std::string out;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (s) out += '\n';
    const auto& sent = sentences[s];
    for (std::size_t i = 0; i < sent.tokens.size(); ++i) {
      out += sent.tokens[i];
      out += '\t';
      out += sent.tags[i].str();
      out += '\n';
    }
  }
  return out;
}

void write_conll(std::span<const Sentence> sentences, const std::filesystem::path& path) {
  write_file(path, to_conll(sentences));
}

// --- FEW-NERD episodes ------------------------------------------------------

namespace {

using nlohmann::json;

const json& field(const json& obj, std::initializer_list<const char*> names, std::size_t episode) {
  for (const char* n : names) {
    if (obj.contains(n)) return obj.at(n);
  }
  throw DataError("episode " + std::to_string(episode) + ": missing field '" + *names.begin() + "'");
}

std::vector<Sentence> parse_side(const json& side, std::size_t episode, const char* which) {
  const auto& words = field(side, {"words", "word"}, episode);
  const auto& labels = field(side, {"labels", "label"}, episode);
  if (!words.is_array() || !labels.is_array() || words.size() != labels.size()) {
    throw DataError("episode " + std::to_string(episode) + ": " + which +
                    " words/labels must be arrays of equal length");
  }
  std::vector<Sentence> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    Sentence s;
    s.tokens = words[i].get<std::vector<std::string>>();
    for (const auto& l : labels[i]) s.tags.push_back(Tag::parse(l.get<std::string>()));
    if (s.tokens.empty() || s.tokens.size() != s.tags.size()) {
      throw DataError("episode " + std::to_string(episode) + ": " + which + " sentence " + std::to_string(i) +
                      " has mismatched or empty tokens/labels");
    }
    out.push_back(std::move(s));
  }
  return out;
}

json side_to_json(std::span<const Sentence> sentences) {
  json words = json::array(), labels = json::array();
  for (const auto& s : sentences) {
    words.push_back(s.tokens);
    json l = json::array();
    for (const auto& t : s.tags) l.push_back(std::string(t.class_name()));
    labels.push_back(std::move(l));
  }
  return json{{"word", std::move(words)}, {"label", std::move(labels)}};
}

}  // namespace

std::vector<Episode> parse_fewnerd_episodes(std::string_view text) {
  std::vector<Episode> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    const std::size_t idx = out.size();
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("episode " + std::to_string(idx) + ": malformed record: " + e.what());
    }
    Episode ep;
    try {
      ep.support = parse_side(field(rec, {"support"}, idx), idx, "support");
      ep.query = parse_side(field(rec, {"query"}, idx), idx, "query");
      ep.types = field(rec, {"types"}, idx).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError("episode " + std::to_string(idx) + ": " + e.what());
    }
    std::set<std::string> types(ep.types.begin(), ep.types.end());
    if (types.size() != ep.types.size()) throw DataError("episode " + std::to_string(idx) + ": duplicate types");
    ep.n_way = types.size();
    if (rec.contains("N") && rec["N"].get<std::size_t>() != ep.n_way) {
      throw DataError("episode " + std::to_string(idx) + ": declared N does not match types");
    }
    std::map<std::string, std::size_t> support_counts;
    for (const auto& s : ep.support) {
      for (const auto& span : extract_spans(s.tags)) ++support_counts[span.cls];
    }
    for (const auto& [cls, n] : support_counts) {
      if (!types.count(cls)) {
        throw DataError("episode " + std::to_string(idx) + ": support class '" + cls + "' is not an episode type");
      }
    }
    if (support_counts.size() != ep.n_way) {
      throw DataError("episode " + std::to_string(idx) + ": support covers " + std::to_string(support_counts.size()) +
                      " classes but N = " + std::to_string(ep.n_way));
    }
    for (const auto& s : ep.query) {
      for (const auto& t : s.tags) {
        if (t.is_entity() && !support_counts.count(t.cls)) {
          throw DataError("episode " + std::to_string(idx) + ": query class '" + t.cls + "' absent from support");
        }
      }
    }
    if (rec.contains("K")) {
      ep.k_shot = rec["K"].get<std::size_t>();
    } else {
      ep.k_shot = support_counts.empty() ? 0 : support_counts.begin()->second;
      for (const auto& [cls, n] : support_counts) ep.k_shot = std::min(ep.k_shot, n);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<Episode> read_fewnerd_episodes(const std::filesystem::path& path) {
  return parse_fewnerd_episodes(read_file(path));
}

std::string episode_to_json_line(const Episode& episode) {
  json rec{{"support", side_to_json(episode.support)},
           {"query", side_to_json(episode.query)},
           {"types", episode.types},
           {"K", episode.k_shot}};
  return rec.dump();
}

}  // namespace fsner
