// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. Tolerances are pinned here, not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "../support/scenarios.hpp"
#include "../support/synthetic.hpp"
#include "fsner/config.hpp"
#include "fsner/eval.hpp"
#include "fsner/losses.hpp"
#include "fsner/random.hpp"

namespace fsner {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity. Each objective is rebuilt from scratch for every
// perturbed coordinate; the library's own checker is not used.

constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-6;
constexpr double kGradFloor = 1e-3;  // denominator floor for near-zero gradients
constexpr std::size_t kGradBatches = 20;
constexpr std::size_t kHidden = 16;
constexpr std::size_t kEmbed = 8;

struct RandomBatch {
  Tensor token_hidden;            // [n, 16]
  std::vector<Tensor> rep_hidden;  // per sentence, [3, 16]
  std::vector<std::string> tags;
  std::vector<std::size_t> sentence_of;
};

RandomBatch random_batch(Rng& rng) {
  static const std::vector<std::string> classes = {"alpha", "beta", "O"};
  RandomBatch b;
  const std::size_t n = 4 + rng.below(5);
  b.token_hidden = Tensor::zeros({n, kHidden});
  for (auto& x : b.token_hidden.values) x = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    // At least two tokens of the first class so some anchor has a positive.
    b.tags.push_back(i < 2 ? classes[0] : classes[rng.below(3)]);
    b.sentence_of.push_back(i % 2);
  }
  for (int s = 0; s < 2; ++s) {
    Tensor r = Tensor::zeros({3, kHidden});
    for (auto& x : r.values) x = rng.normal();
    b.rep_hidden.push_back(r);
  }
  return b;
}

// Leaves under test, in a fixed order.
std::vector<Tensor> leaves_of(const RandomBatch& b, const ParamStore& proj) {
  return {b.token_hidden, b.rep_hidden[0], b.rep_hidden[1], proj.at("projection.mu.hidden.weight"),
          proj.at("projection.sigma.out.weight")};
}

Var objective(Graph& g, std::vector<Var>& leaves, const RandomBatch& b, const ParamStore& proj,
              const LossConfig& cfg) {
  auto bound = bind_params(g, proj, false);
  bound["projection.mu.hidden.weight"] = leaves[3];
  bound["projection.sigma.out.weight"] = leaves[4];
  BatchGraph batch;
  batch.tokens = project_rows(bound, leaves[0]);
  batch.tags = b.tags;
  batch.sentence_of = b.sentence_of;
  batch.reps = {project_rows(bound, leaves[1]), project_rows(bound, leaves[2])};
  batch.rep_classes = {{"alpha", "beta", "O"}, {"alpha", "beta", "O"}};
  return mixed_loss(batch, cfg).total;
}

double max_rel_error(const RandomBatch& b, const ParamStore& proj, const LossConfig& cfg) {
  const auto points = leaves_of(b, proj);
  auto eval = [&](const std::vector<Tensor>& pts) {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : pts) leaves.push_back(g.constant(t));
    return objective(g, leaves, b, proj, cfg).item();
  };
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : points) leaves.push_back(g.parameter(t));
  g.backward(objective(g, leaves, b, proj, cfg));

  double worst = 0.0;
  auto work = points;
  for (std::size_t l = 0; l < work.size(); ++l) {
    const auto analytic = g.grad(leaves[l]);
    for (std::size_t i = 0; i < work[l].size(); ++i) {
      const double orig = work[l].values[i];
      work[l].values[i] = orig + kGradStep;
      const double up = eval(work);
      work[l].values[i] = orig - kGradStep;
      const double down = eval(work);
      work[l].values[i] = orig;
      const double numeric = (up - down) / (2.0 * kGradStep);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), kGradFloor});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  struct Case {
    const char* name;
    LossConfig cfg;
  };
  auto make = [](LossVariant v, Metric m, double alpha, bool cc, bool cl) {
    LossConfig c;
    c.variant = v;
    c.metric = m;
    c.alpha = alpha;
    c.use_context_context = cc;
    c.use_context_label = cl;
    return c;
  };
  const std::vector<Case> cases = {
      {"cc-ocl", make(LossVariant::Ocl, Metric::SymmetrizedKl, 1.0, true, false)},
      {"cc-icl", make(LossVariant::Icl, Metric::SymmetrizedKl, 1.0, true, false)},
      {"cl", make(LossVariant::Icl, Metric::SymmetrizedKl, 0.0, false, true)},
      {"mixed", make(LossVariant::Icl, Metric::SymmetrizedKl, 0.5, true, true)},
      {"cl-euclid", make(LossVariant::Icl, Metric::SquaredEuclidean, 0.0, false, true)},
  };
  Rng rng(derive_seed(2024, "acceptance-gradients"));
  ProjectionConfig pc{kHidden, kHidden, kEmbed};
  std::string detail;
  bool ok = true;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::size_t k = 0; k < kGradBatches; ++k) {
      const auto proj = init_projection_params(pc, rng.next_u64());
      worst = std::max(worst, max_rel_error(random_batch(rng), proj, c.cfg));
    }
    ok = ok && worst <= kGradTolerance;
    detail += fmt("%s=%.1e ", c.name, worst);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  return {ok, detail + fmt("(%zu batches each, tol %.0e, %.1fs < 120s)", kGradBatches, kGradTolerance, secs)};
}

// ---------------------------------------------------------------------------
// 2. Loss-variant ordering on random anchors.

Outcome loss_variant_ordering() {
  Rng rng(derive_seed(2024, "acceptance-variants"));
  std::size_t singles = 0, violations = 0;
  double worst_single = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    BatchView b;
    const std::size_t n = 3 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      GaussianEmbedding e;
      for (int k = 0; k < 4; ++k) {
        e.mu.push_back(rng.normal() * 1.5);
        e.sigma2.push_back(0.2 + 2.0 * rng.uniform());
      }
      b.tokens.push_back(e);
      b.tags.push_back(std::string(1, static_cast<char>('a' + rng.below(3))));
      b.sentence_of.push_back(0);
    }
    b.tags[1] = b.tags[0];  // anchor 0 always has a positive
    const auto in = anchor_loss_in(0, b, Metric::SymmetrizedKl);
    const auto out = anchor_loss_out(0, b, Metric::SymmetrizedKl);
    if (!in || !out) {
      ++violations;
      continue;
    }
    if (*out < *in - 1e-12) ++violations;
    if (positive_sets(b.tags)[0].size() == 1) {
      ++singles;
      worst_single = std::max(worst_single, std::abs(*out - *in));
    }
  }
  const bool ok = violations == 0 && singles > 0 && worst_single <= 1e-12;
  return {ok, fmt("1000 anchors, %zu ordering violations; %zu single-positive anchors, max |out-in| %.1e (tol 1e-12)",
                  violations, singles, worst_single)};
}

// ---------------------------------------------------------------------------
// 3. Divergence correctness.

Outcome divergence_correctness() {
  double worst_kl = 0.0;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double mu = -2.0 + 4.0 * i / 9.0;
      const double var = 0.25 + 3.75 * j / 9.0;
      const GaussianEmbedding p{{0.0}, {1.0}}, q{{mu}, {var}};
      worst_kl = std::max(worst_kl, std::abs(kl(p, q) - oracle::kl_1d_integrated(0.0, 1.0, mu, var)));
      worst_kl = std::max(worst_kl, std::abs(kl(q, p) - oracle::kl_1d_integrated(mu, var, 0.0, 1.0)));
    }
  }
  Rng rng(derive_seed(2024, "acceptance-divergence"));
  double worst_sym = 0.0, worst_self = 0.0;
  for (int t = 0; t < 1000; ++t) {
    GaussianEmbedding p, q;
    for (int k = 0; k < 8; ++k) {
      p.mu.push_back(rng.normal());
      q.mu.push_back(rng.normal());
      p.sigma2.push_back(0.1 + 4.0 * rng.uniform());
      q.sigma2.push_back(0.1 + 4.0 * rng.uniform());
    }
    worst_sym = std::max(worst_sym, std::abs(js(p, q) - js(q, p)));
    worst_self = std::max(worst_self, kl(p, p));
  }
  const bool ok = worst_kl <= 1e-3 && worst_sym <= 4 * std::numeric_limits<double>::epsilon() && worst_self <= 1e-12;
  return {ok, fmt("max |KL - integral| %.1e over 10x10 grid, both directions (tol 1e-3); "
                  "max |js(p,q)-js(q,p)| %.1e; max kl(p,p) %.1e (tol 1e-12)",
                  worst_kl, worst_sym, worst_self)};
}

// ---------------------------------------------------------------------------
// 4. Memorization oracle.

Outcome memorization() {
  const auto t0 = Clock::now();
  std::vector<double> support, heldout;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = scenario::memorization(seed);
    support.push_back(r.support_f1);
    heldout.push_back(r.heldout_f1);
  }
  const double secs = seconds_since(t0);
  const bool ok = median(support) == 1.0 && median(heldout) >= 0.9 && secs < 300.0;
  std::string runs;
  for (std::size_t i = 0; i < heldout.size(); ++i) runs += fmt("%.2f/%.2f ", support[i], heldout[i]);
  return {ok, fmt("median support F1 %.3f (need 1.0), median held-out F1 %.3f (need >= 0.9); per seed %s(%.1fs < 300s)",
                  median(support), median(heldout), runs.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 5. Transfer behavior.

Outcome transfer() {
  std::vector<double> deltas;
  std::string runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = scenario::transfer(seed);
    deltas.push_back(r.tuned_f1 - r.baseline_f1);
    runs += fmt("%+.2f ", deltas.back());
  }
  const auto one = scenario::transfer(1, ShotMode::OneShot);
  const bool path_ok = one.counters.context_context == 0 && one.counters.context_label > 0;
  const bool ok = median(deltas) > 0.0 && path_ok;
  return {ok, fmt("median F1 delta (tuned - source) %+.3f (need > 0), per seed %s; 1-shot fine-tune evaluated "
                  "context-context %zu times, context-label %zu times over %zu steps",
                  median(deltas), runs.c_str(), one.counters.context_context, one.counters.context_label,
                  one.iterations)};
}

// ---------------------------------------------------------------------------
// 6. Nearest-neighbor oracle equivalence.

Outcome nearest_neighbor() {
  Rng rng(derive_seed(2024, "acceptance-nn"));
  std::size_t mismatches = 0, queries = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(200), q = 1 + rng.below(50), d = 1 + rng.below(16);
    const bool coarse = trial % 2 == 0;  // integer grid: exact ties are common
    auto draw = [&] { return coarse ? static_cast<double>(rng.below(4)) : rng.normal(); };
    std::vector<std::vector<double>> bank_rows(rows, std::vector<double>(d));
    SupportBank bank;
    bank.rows = Tensor::zeros({rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < d; ++k) bank.rows(r, k) = bank_rows[r][k] = draw();
      bank.tags.push_back(Tag::inside("c" + std::to_string(r)));
      bank.provenance.emplace_back(0, r);
    }
    Tensor query = Tensor::zeros({q, d});
    for (auto& x : query.values) x = draw();
    const auto got = nn_decode(query, bank);
    for (std::size_t i = 0; i < q; ++i, ++queries) {
      const std::vector<double> qi(query.row(i).begin(), query.row(i).end());
      if (got[i] != bank.tags[oracle::nearest_row(qi, bank_rows)]) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("100 instances, %zu query tokens, %zu mismatches against the double loop", queries,
                               mismatches)};
}

// ---------------------------------------------------------------------------
// 7. Sampler soundness.

Outcome sampler() {
  synth::CorpusSpec spec = synth::separable_spec("person", "location");
  spec.classes.push_back({"org", synth::word_pool("org", 8), ""});
  spec.max_mentions = 3;
  const auto corpus = synth::make_corpus(spec, 400, 99);
  const auto labels = synth::label_set_for(spec);
  std::size_t bad = 0, errors = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const std::size_t n = 2 + seed % 2, k = 1 + (seed / 2) % 5;
    try {
      const auto s = greedy_sample_support(corpus, labels, n, k, seed);
      bool within = s.counts.size() == n;
      for (const auto& [cls, c] : s.counts) within = within && c >= k && c <= 2 * k;
      bad += !within;
    } catch (const Error&) {
      ++errors;
    }
  }
  const auto a = greedy_sample_support(corpus, labels, 3, 2, 1234);
  const auto b = greedy_sample_support(corpus, labels, 3, 2, 1234);
  const bool same = a.indices == b.indices && a.classes == b.classes;
  return {bad == 0 && errors == 0 && same,
          fmt("10000 supports (N in {2,3}, K in 1..5): %zu outside [K, 2K], %zu failures; repeat seed identical: %s",
              bad, errors, same ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 8. Scoring oracle.

Outcome scoring() {
  Rng rng(derive_seed(2024, "acceptance-scoring"));
  const char* pool[] = {"", "A", "B", "C"};
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t sentences = 1 + rng.below(4);
    std::vector<std::vector<Span>> gold, pred;
    oracle::PRF expected;
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t n = 1 + rng.below(20);
      std::vector<std::string> g(n), p(n);
      for (auto& x : g) x = pool[rng.below(4)];
      for (std::size_t k = 0; k < n; ++k) p[k] = rng.below(4) == 0 ? pool[rng.below(4)] : g[k];
      auto to_tags = [](const std::vector<std::string>& cls) {
        std::vector<Tag> out;
        for (const auto& c : cls) out.push_back(c.empty() ? Tag::outside() : Tag::inside(c));
        return out;
      };
      gold.push_back(extract_spans(to_tags(g)));
      pred.push_back(extract_spans(to_tags(p)));
      const auto c = oracle::match_spans(oracle::spans_of(g), oracle::spans_of(p));
      expected.tp += c.tp;
      expected.fp += c.fp;
      expected.fn += c.fn;
    }
    const auto got = micro_f1(gold, pred);
    if (got.counts.tp != expected.tp || got.counts.fp != expected.fp || got.counts.fn != expected.fn ||
        got.f1 != expected.f1()) {
      ++mismatches;
    }
  }
  // Episode A: one hit and one spurious span. Episode B: one hit, one miss.
  auto tags = [](std::initializer_list<const char*> raw) {
    std::vector<Tag> out;
    for (const char* r : raw) out.push_back(Tag::parse(r));
    return out;
  };
  Counts pooled = score_sentence(tags({"I-PER", "O", "O"}), tags({"I-PER", "O", "I-LOC"}), ScoringUnit::Span);
  const Counts a = pooled;
  const Counts b = score_sentence(tags({"I-PER", "O", "I-LOC"}), tags({"I-PER", "O", "O"}), ScoringUnit::Span);
  pooled += b;
  const auto report = report_from_counts(pooled, {f1(a), f1(b)});
  const bool fixture = a == Counts{1, 1, 0} && b == Counts{1, 0, 1} && std::abs(report.f1 - 2.0 / 3.0) < 1e-15;
  return {mismatches == 0 && fixture, fmt("100 random multi-sentence sets, %zu mismatches; two-episode pooled F1 %.6f "
                                          "(expected 0.666667)",
                                          mismatches, report.f1)};
}

// ---------------------------------------------------------------------------
// 9. Reproducibility and persistence.

Outcome reproducibility() {
  const auto spec = synth::separable_spec("person", "location", "", 4, 10);
  auto rr = spec;
  rr.round_robin = true;
  const auto train = synth::make_corpus(spec, 20, 5);
  const auto support = synth::make_corpus(rr, 8, 6);
  const auto query = synth::make_corpus(spec, 12, 7);
  const auto map = synth::label_map_for(spec);
  const auto labels = synth::label_set_for(spec);
  const auto vocab = build_vocab(scenario::concat({&train, &support, &query}), 1, &map);
  const auto tc = scenario::desk_train_config(77);  // dropout on throughout

  auto pipeline = [&] {
    const auto trained = train_source(train, labels, map, vocab, scenario::desk_model_config(), tc);
    return finetune(trained.checkpoint, support, labels, map, tc).checkpoint;
  };
  const auto a = pipeline();
  const auto b = pipeline();
  const bool identical = serialize_checkpoint(a) == serialize_checkpoint(b);

  const auto path = fs::temp_directory_path() / "fsner_acceptance_ckpt.fsner";
  const auto before = predict(a, build_support_bank(a, support), query);
  save_checkpoint(a, path);
  const auto loaded = load_checkpoint(path);
  const auto after = predict(loaded, build_support_bank(loaded, support), query);
  fs::remove(path);
  bool same_pred = before.size() == after.size();
  for (std::size_t i = 0; same_pred && i < before.size(); ++i) same_pred = before[i].tags == after[i].tags;
  // Raw vectors too, not just decoded tags.
  const bool same_repr =
      token_representations(a, query[0]).values == token_representations(loaded, query[0]).values;
  return {identical && same_pred && same_repr,
          fmt("train+finetune twice: checkpoints %s; save->load predictions %s, representations %s",
              identical ? "bit-identical" : "DIFFER", same_pred ? "identical" : "DIFFER",
              same_repr ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// 10. Config fidelity.

Outcome config_defaults() {
  const RunConfig c;
  struct Check {
    const char* name;
    bool ok;
  };
  const std::vector<Check> checks = {
      {"lr 5e-5", c.train.optimizer.lr == 5e-5},
      {"batch 32", c.train.batch_size == 32},
      {"max_len 128", c.train.max_len == 128 && c.model_config().encoder.max_len == 128},
      {"l 128", c.projection.output_dim == 128},
      {"epochs 1", c.train.epochs == 1},
      {"alpha grid {0.8,0.5,0.3}", c.train.alpha_grid == std::vector<double>{0.8, 0.5, 0.3}},
      {"dropout 0.1", c.encoder.dropout == 0.1},
      {"weight decay 0.01", c.train.optimizer.weight_decay == 0.01},
      {"tau 1", c.train.loss.tau == 1.0},
      {"T 5", c.runs == 5},
  };
  std::string failed;
  for (const auto& ch : checks) {
    if (!ch.ok) failed += std::string(ch.name) + "; ";
  }
  return {failed.empty(), failed.empty() ? fmt("%zu defaults match", checks.size()) : "mismatch: " + failed};
}

}  // namespace
}  // namespace fsner

int main() {
  using namespace fsner;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"loss-variant ordering", loss_variant_ordering},
      {"divergence correctness", divergence_correctness},
      {"memorization oracle", memorization},
      {"transfer behavior", transfer},
      {"nearest-neighbor oracle", nearest_neighbor},
      {"sampler soundness", sampler},
      {"scoring oracle", scoring},
      {"reproducibility & persistence", reproducibility},
      {"config fidelity", config_defaults},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
