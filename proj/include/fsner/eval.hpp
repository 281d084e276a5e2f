#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsner/data.hpp"
#include "fsner/spans.hpp"
#include "fsner/tensor.hpp"
#include "fsner/training.hpp"

namespace fsner {

// Per-token vectors for nearest-neighbor decoding: raw encoder hidden states
// by default, or mu projections when use_projection is set. Eval mode.
struct InferenceOptions {
  bool use_projection = false;
};

// Representations of the context tokens kept after truncation, [kept, d],
// computed with the checkpoint's current label prompt.
Tensor token_representations(const Checkpoint& checkpoint, const Sentence& sentence,
                             const InferenceOptions& options = {});

struct SupportBank {
  Tensor rows;                                            // [n, d]
  std::vector<Tag> tags;                                  // one per row
  std::vector<std::pair<std::size_t, std::size_t>> provenance;  // (sentence, token)

  std::size_t size() const noexcept { return tags.size(); }
};

SupportBank build_support_bank(const Checkpoint& checkpoint, std::span<const Sentence> support,
                               const InferenceOptions& options = {});

// Tag of the nearest bank row by squared Euclidean distance; ties go to the
// lowest row index. DataError on an empty bank, ShapeError on width mismatch.
std::vector<Tag> nn_decode(const Tensor& query, const SupportBank& bank);

// Full-length tag sequence; tokens lost to truncation are tagged O.
std::vector<Tag> predict_tags(const Checkpoint& checkpoint, const SupportBank& bank, const Sentence& sentence,
                              const InferenceOptions& options = {});
std::vector<Sentence> predict(const Checkpoint& checkpoint, const SupportBank& bank,
                              std::span<const Sentence> queries, const InferenceOptions& options = {});

// --- scoring ----------------------------------------------------------------

enum class ScoringUnit { Span, Token };
std::string_view to_string(ScoringUnit unit) noexcept;
ScoringUnit scoring_unit_from_string(std::string_view s);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

double precision(const Counts& c) noexcept;
double recall(const Counts& c) noexcept;
// 2PR / (P + R), or 0 when P + R = 0.
double f1(const Counts& c) noexcept;

// Exact (start, end, class) matches; duplicates are matched at most once.
Counts count_spans(std::span<const Span> gold, std::span<const Span> pred);
// Entity tokens only: a token is a TP when gold and prediction agree on a
// non-O class.
Counts count_tokens(std::span<const Tag> gold, std::span<const Tag> pred);
Counts score_sentence(std::span<const Tag> gold, std::span<const Tag> pred, ScoringUnit unit);

struct EvalReport {
  Counts counts;  // pooled over everything scored
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> per_run;  // per episode or per low-resource run
  double mean = 0.0;
  double stddev = 0.0;          // sample standard deviation; 0 for fewer than 2 runs
  std::vector<std::string> failures;  // runs that could not be carried out

  std::string summary() const;
  std::string to_json() const;
};

EvalReport report_from_counts(const Counts& counts, std::vector<double> per_run = {});
double mean_of(std::span<const double> xs);
double sample_stddev(std::span<const double> xs);

EvalReport micro_f1(std::span<const std::vector<Span>> gold, std::span<const std::vector<Span>> pred);

// --- protocols --------------------------------------------------------------

struct EvalOptions {
  InferenceOptions inference;
  ScoringUnit unit = ScoringUnit::Span;
  std::size_t jobs = 1;
  // Keep going when a low-resource run cannot sample a support set.
  bool exclude_failed_runs = false;
  // Derive phrases for episode types missing from the label map.
  bool derive_missing_phrases = true;
};

// Per episode: restart from `source`, fine-tune on the support set, decode the
// queries with the support bank, and pool counts across all episodes.
EvalReport evaluate_episodes(const Checkpoint& source, std::span<const Episode> episodes, const LabelMap& label_map,
                             const TrainConfig& config, const EvalOptions& options = {});

struct LowResourceSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t runs = 5;
  std::vector<std::uint64_t> seeds;  // one per run; derived from config.seed when empty
  bool strict_k = false;
};

// T runs of sample -> fine-tune -> decode the whole test set -> score.
EvalReport low_resource_eval(const Checkpoint& source, std::span<const Sentence> target_train,
                             std::span<const Sentence> target_test, const LabelSet& target_labels,
                             const LabelMap& label_map, const LowResourceSpec& spec, const TrainConfig& config,
                             const EvalOptions& options = {});

// Tab-separated: header `token tag h0 .. h{d-1}`, one row per kept token.
void dump_embeddings(const Checkpoint& checkpoint, std::span<const Sentence> sentences,
                     const std::filesystem::path& path, const InferenceOptions& options = {});

struct EmbeddingRow {
  std::string token;
  std::string tag;
  std::vector<double> values;
};
std::vector<EmbeddingRow> read_embedding_dump(const std::filesystem::path& path);

}  // namespace fsner
