#include "fsner/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "fsner/random.hpp"
#include "json.hpp"

namespace fsner {

namespace {

constexpr std::size_t kInferenceChunk = 32;

[[noreturn]] void rethrow_with_prefix(const Error& e, const std::string& prefix) {
  const std::string msg = prefix + e.what();
  switch (e.kind()) {
    case ErrorKind::Usage:
      throw UsageError(msg);
    case ErrorKind::Data:
      throw DataError(msg);
    case ErrorKind::Numeric:
      throw NumericError(msg);
  }
  throw Error(e.kind(), msg);
}

// Gold tags play no part at inference time, and test sentences may carry
// classes the prompt does not list.
Sentence untagged(const Sentence& s) { return {s.tokens, std::vector<Tag>(s.size())}; }

// Representations for a list of sentences, sharing one parameter binding per
// chunk.
std::vector<Tensor> representations(const Checkpoint& ckpt, std::span<const Sentence> sentences,
                                    const InferenceOptions& options) {
  const LabelPrompt prompt = ckpt.prompt();
  const auto& cfg = ckpt.model.config.encoder;
  std::vector<Tensor> out;
  out.reserve(sentences.size());
  for (std::size_t start = 0; start < sentences.size(); start += kInferenceChunk) {
    Graph graph;
    auto bound = bind_params(graph, ckpt.model.params, false);
    const std::size_t end = std::min(sentences.size(), start + kInferenceChunk);
    for (std::size_t i = start; i < end; ++i) {
      const auto input = assemble_input(untagged(sentences[i]), prompt, ckpt.vocab, cfg.max_len);
      if (input.context_positions.empty()) {
        const std::size_t width = options.use_projection ? ckpt.model.config.projection.output_dim : cfg.hidden_dim;
        out.push_back(Tensor::zeros({0, width}));
        continue;
      }
      Var h = encode_occupied(graph, bound, cfg, input, false);
      Var rows = ag::gather_rows(h, input.context_positions);
      if (options.use_projection) rows = project_rows(bound, rows).mu;
      out.push_back(rows.value());
    }
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::size_t first_index = count;
  std::mutex mu;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            // Report the lowest failing index so errors do not depend on timing.
            if (i < first_index) {
              first_index = i;
              first_error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

Tensor token_representations(const Checkpoint& checkpoint, const Sentence& sentence,
                             const InferenceOptions& options) {
  return std::move(representations(checkpoint, std::span(&sentence, 1), options).front());
}

SupportBank build_support_bank(const Checkpoint& checkpoint, std::span<const Sentence> support,
                               const InferenceOptions& options) {
  const auto reps = representations(checkpoint, support, options);
  SupportBank bank;
  std::size_t width = 0;
  std::vector<double> values;
  for (std::size_t s = 0; s < support.size(); ++s) {
    const Tensor& r = reps[s];
    width = r.cols();
    for (std::size_t t = 0; t < r.rows(); ++t) {
      auto row = r.row(t);
      values.insert(values.end(), row.begin(), row.end());
      bank.tags.push_back(support[s].tags[t]);
      bank.provenance.emplace_back(s, t);
    }
  }
  if (bank.tags.empty()) throw DataError("support bank is empty: no support tokens to compare against");
  bank.rows = Tensor({bank.tags.size(), width}, std::move(values));
  return bank;
}

std::vector<Tag> nn_decode(const Tensor& query, const SupportBank& bank) {
  if (bank.size() == 0 || bank.rows.rows() != bank.size()) throw DataError("nn_decode: empty support bank");
  if (query.rows() > 0 && query.cols() != bank.rows.cols()) throw ShapeError("nn_decode", query.shape, bank.rows.shape);
  std::vector<Tag> out;
  out.reserve(query.rows());
  const std::size_t d = bank.rows.cols();
  for (std::size_t q = 0; q < query.rows(); ++q) {
    const double* x = query.values.data() + q * d;
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < bank.size(); ++r) {
      const double* y = bank.rows.values.data() + r * d;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist += (x[k] - y[k]) * (x[k] - y[k]);
      if (dist < best_dist) {
        best_dist = dist;
        best = r;
      }
    }
    out.push_back(bank.tags[best]);
  }
  return out;
}

std::vector<Tag> predict_tags(const Checkpoint& checkpoint, const SupportBank& bank, const Sentence& sentence,
                              const InferenceOptions& options) {
  auto tags = nn_decode(token_representations(checkpoint, sentence, options), bank);
  tags.resize(sentence.size());
  return tags;
}

std::vector<Sentence> predict(const Checkpoint& checkpoint, const SupportBank& bank,
                              std::span<const Sentence> queries, const InferenceOptions& options) {
  const auto reps = representations(checkpoint, queries, options);
  std::vector<Sentence> out;
  out.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto tags = nn_decode(reps[i], bank);
    tags.resize(queries[i].size());
    out.push_back({queries[i].tokens, std::move(tags)});
  }
  return out;
}

// --- scoring ----------------------------------------------------------------

std::string_view to_string(ScoringUnit unit) noexcept { return unit == ScoringUnit::Span ? "span" : "token"; }

ScoringUnit scoring_unit_from_string(std::string_view s) {
  if (s == "span") return ScoringUnit::Span;
  if (s == "token") return ScoringUnit::Token;
  throw UsageError("scoring unit: expected 'span' or 'token', got '" + std::string(s) + "'");
}

double precision(const Counts& c) noexcept {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const Counts& c) noexcept {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1(const Counts& c) noexcept {
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

Counts count_spans(std::span<const Span> gold, std::span<const Span> pred) {
  std::vector<Span> g(gold.begin(), gold.end()), p(pred.begin(), pred.end());
  std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  std::vector<Span> common;
  std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(common));
  return {common.size(), p.size() - common.size(), g.size() - common.size()};
}

Counts count_tokens(std::span<const Tag> gold, std::span<const Tag> pred) {
  if (gold.size() != pred.size()) throw DataError("token scoring: gold and predicted lengths differ");
  Counts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].is_entity() && gold[i] == pred[i]) {
      ++c.tp;
      continue;
    }
    if (pred[i].is_entity()) ++c.fp;
    if (gold[i].is_entity()) ++c.fn;
  }
  return c;
}

Counts score_sentence(std::span<const Tag> gold, std::span<const Tag> pred, ScoringUnit unit) {
  if (unit == ScoringUnit::Token) return count_tokens(gold, pred);
  if (gold.size() != pred.size()) throw DataError("span scoring: gold and predicted lengths differ");
  const auto g = extract_spans(gold);
  const auto p = extract_spans(pred);
  return count_spans(g, p);
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

EvalReport report_from_counts(const Counts& counts, std::vector<double> per_run) {
  EvalReport r;
  r.counts = counts;
  r.precision = precision(counts);
  r.recall = recall(counts);
  r.f1 = f1(counts);
  r.mean = mean_of(per_run);
  r.stddev = sample_stddev(per_run);
  r.per_run = std::move(per_run);
  return r;
}

EvalReport micro_f1(std::span<const std::vector<Span>> gold, std::span<const std::vector<Span>> pred) {
  if (gold.size() != pred.size()) throw DataError("micro_f1: gold and prediction sentence counts differ");
  Counts total;
  for (std::size_t i = 0; i < gold.size(); ++i) total += count_spans(gold[i], pred[i]);
  return report_from_counts(total);
}

std::string EvalReport::summary() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  for (std::size_t i = 0; i < per_run.size(); ++i) out << "run " << i << ": f1=" << per_run[i] << '\n';
  for (const auto& f : failures) out << "failed: " << f << '\n';
  if (!per_run.empty()) out << "mean f1=" << mean << " +- " << stddev << " (" << per_run.size() << " runs)\n";
  out << "pooled tp=" << counts.tp << " fp=" << counts.fp << " fn=" << counts.fn << " precision=" << precision
      << " recall=" << recall << " f1=" << f1 << '\n';
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"tp", counts.tp},     {"fp", counts.fp}, {"fn", counts.fn},   {"precision", precision},
                      {"recall", recall},    {"f1", f1},        {"per_run", per_run}, {"mean", mean},
                      {"stddev", stddev},    {"failures", failures}};
  return j.dump(2);
}

// --- protocols --------------------------------------------------------------

namespace {

struct RunOutcome {
  Counts counts;
  double f1 = 0.0;
};

RunOutcome adapt_and_score(const Checkpoint& source, std::span<const Sentence> support,
                           std::span<const Sentence> queries, const LabelSet& labels, const LabelMap& label_map,
                           const TrainConfig& config, const EvalOptions& options) {
  const auto tuned = finetune(source, support, labels, label_map, config);
  const auto bank = build_support_bank(tuned.checkpoint, support, options.inference);
  const auto predicted = predict(tuned.checkpoint, bank, queries, options.inference);
  RunOutcome out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.counts += score_sentence(queries[i].tags, predicted[i].tags, options.unit);
  }
  out.f1 = f1(out.counts);
  return out;
}

}  // namespace

EvalReport evaluate_episodes(const Checkpoint& source, std::span<const Episode> episodes, const LabelMap& label_map,
                             const TrainConfig& config, const EvalOptions& options) {
  if (episodes.empty()) throw DataError("evaluate_episodes: no episodes to evaluate");
  std::vector<RunOutcome> outcomes(episodes.size());
  parallel_for(episodes.size(), options.jobs, [&](std::size_t i) {
    try {
      const Episode& ep = episodes[i];
      LabelSet labels(ep.types, DomainRole::Target);
      LabelMap map = label_map;
      if (options.derive_missing_phrases) map.fill_missing(labels);
      TrainConfig cfg = config;
      cfg.seed = derive_seed(config.seed, "episode", i);
      outcomes[i] = adapt_and_score(source, ep.support, ep.query, labels, map, cfg, options);
    } catch (const Error& e) {
      rethrow_with_prefix(e, "episode " + std::to_string(i) + ": ");
    }
  });
  Counts pooled;
  std::vector<double> per_run;
  for (const auto& o : outcomes) {
    pooled += o.counts;
    per_run.push_back(o.f1);
  }
  return report_from_counts(pooled, std::move(per_run));
}

EvalReport low_resource_eval(const Checkpoint& source, std::span<const Sentence> target_train,
                             std::span<const Sentence> target_test, const LabelSet& target_labels,
                             const LabelMap& label_map, const LowResourceSpec& spec, const TrainConfig& config,
                             const EvalOptions& options) {
  if (spec.runs == 0) throw UsageError("low-resource evaluation needs at least one run");
  if (!spec.seeds.empty() && spec.seeds.size() != spec.runs) {
    throw UsageError("low-resource evaluation: " + std::to_string(spec.seeds.size()) + " seeds for " +
                     std::to_string(spec.runs) + " runs");
  }
  if (target_test.empty()) throw DataError("low-resource evaluation: empty test set");

  std::vector<std::optional<RunOutcome>> outcomes(spec.runs);
  std::vector<std::string> failures(spec.runs);
  parallel_for(spec.runs, options.jobs, [&](std::size_t t) {
    const std::uint64_t seed = spec.seeds.empty() ? derive_seed(config.seed, "low-resource", t) : spec.seeds[t];
    SupportSample sample;
    try {
      sample = greedy_sample_support(target_train, target_labels, spec.n_way, spec.k_shot, seed, spec.strict_k);
    } catch (const DataError& e) {
      if (!options.exclude_failed_runs) rethrow_with_prefix(e, "run " + std::to_string(t) + ": ");
      failures[t] = "run " + std::to_string(t) + ": " + e.what();
      return;
    }
    try {
      LabelSet labels(sample.classes, DomainRole::Target);
      LabelMap map = label_map;
      if (options.derive_missing_phrases) map.fill_missing(labels);
      TrainConfig cfg = config;
      cfg.seed = derive_seed(seed, "finetune");
      outcomes[t] = adapt_and_score(source, sample.sentences, target_test, labels, map, cfg, options);
    } catch (const Error& e) {
      rethrow_with_prefix(e, "run " + std::to_string(t) + ": ");
    }
  });

  Counts pooled;
  std::vector<double> per_run;
  std::vector<std::string> failed;
  for (std::size_t t = 0; t < spec.runs; ++t) {
    if (outcomes[t]) {
      pooled += outcomes[t]->counts;
      per_run.push_back(outcomes[t]->f1);
    } else {
      failed.push_back(failures[t]);
    }
  }
  if (per_run.empty()) throw DataError("low-resource evaluation: every run failed to sample a support set");
  auto report = report_from_counts(pooled, std::move(per_run));
  report.failures = std::move(failed);
  return report;
}

void dump_embeddings(const Checkpoint& checkpoint, std::span<const Sentence> sentences,
                     const std::filesystem::path& path, const InferenceOptions& options) {
  const auto reps = representations(checkpoint, sentences, options);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  const std::size_t d =
      options.use_projection ? checkpoint.model.config.projection.output_dim : checkpoint.model.config.encoder.hidden_dim;
  out << "token\ttag";
  for (std::size_t k = 0; k < d; ++k) out << "\th" << k;
  out << '\n';
  char buf[32];
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (std::size_t t = 0; t < reps[s].rows(); ++t) {
      out << sentences[s].tokens[t] << '\t' << sentences[s].tags[t].str();
      for (double v : reps[s].row(t)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << '\t' << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw DataError("failed writing embeddings to '" + path.string() + "'");
}

std::vector<EmbeddingRow> read_embedding_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  std::vector<EmbeddingRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    EmbeddingRow row;
    std::string cell;
    if (!std::getline(fields, row.token, '\t') || !std::getline(fields, row.tag, '\t')) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    while (std::getline(fields, cell, '\t')) {
      try {
        row.values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fsner
