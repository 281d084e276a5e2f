#include "fsner/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace fsner {

std::string_view to_string(LossVariant v) noexcept { return v == LossVariant::Icl ? "icl" : "ocl"; }

std::string_view to_string(Metric m) noexcept {
  return m == Metric::SymmetrizedKl ? "symmetrized-kl" : "squared-euclidean";
}

LossVariant loss_variant_from_string(std::string_view s) {
  if (s == "icl") return LossVariant::Icl;
  if (s == "ocl") return LossVariant::Ocl;
  throw UsageError("loss_variant: expected 'icl' or 'ocl', got '" + std::string(s) + "'");
}

Metric metric_from_string(std::string_view s) {
  if (s == "symmetrized-kl" || s == "kl" || s == "js") return Metric::SymmetrizedKl;
  if (s == "squared-euclidean" || s == "euclidean") return Metric::SquaredEuclidean;
  throw UsageError("metric: expected 'symmetrized-kl' or 'squared-euclidean', got '" + std::string(s) + "'");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must be in [0, 1]");
  if (!(tau > 0.0)) throw UsageError("tau must be positive");
  if (!use_context_context && !use_context_label) throw UsageError("at least one loss must be enabled");
  if (!(o_subsample > 0.0 && o_subsample <= 1.0)) throw UsageError("o_subsample must be in (0, 1]");
}

// --- reference path ---------------------------------------------------------

double distance(const GaussianEmbedding& p, const GaussianEmbedding& q, Metric metric) {
  return metric == Metric::SymmetrizedKl ? js(p, q) : sq_euclidean(p.mu, q.mu);
}

std::vector<std::vector<std::size_t>> positive_sets(std::span<const std::string> tags) {
  std::vector<std::vector<std::size_t>> out(tags.size());
  for (std::size_t p = 0; p < tags.size(); ++p) {
    for (std::size_t q = 0; q < tags.size(); ++q) {
      if (q != p && tags[q] == tags[p]) out[p].push_back(q);
    }
  }
  return out;
}

namespace {

// log sum_{q in idx} exp(-dist(p, q))
double neg_logsumexp(const Tensor& dist, std::size_t p, std::span<const std::size_t> idx) {
  double mx = -std::numeric_limits<double>::infinity();
  for (auto q : idx) mx = std::max(mx, -dist(p, q));
  double z = 0.0;
  for (auto q : idx) z += std::exp(-dist(p, q) - mx);
  return mx + std::log(z);
}

std::vector<std::size_t> others(std::size_t p, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < n; ++q) {
    if (q != p) out.push_back(q);
  }
  return out;
}

Tensor distance_matrix(const BatchView& batch, Metric metric) {
  const std::size_t n = batch.tokens.size();
  Tensor d = Tensor::zeros({n, n});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p != q) d(p, q) = distance(batch.tokens[p], batch.tokens[q], metric);
    }
  }
  return d;
}

std::vector<std::size_t> positives_of(std::size_t p, std::span<const std::string> tags) {
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < tags.size(); ++q) {
    if (q != p && tags[q] == tags[p]) out.push_back(q);
  }
  return out;
}

}  // namespace

std::optional<double> anchor_loss_in(std::size_t p, const Tensor& dist, std::span<const std::string> tags) {
  const auto pos = positives_of(p, tags);
  if (pos.empty()) return std::nullopt;
  const auto all = others(p, tags.size());
  return -(neg_logsumexp(dist, p, pos) - std::log(static_cast<double>(pos.size()))) + neg_logsumexp(dist, p, all);
}

std::optional<double> anchor_loss_out(std::size_t p, const Tensor& dist, std::span<const std::string> tags) {
  const auto pos = positives_of(p, tags);
  if (pos.empty()) return std::nullopt;
  const double denom = neg_logsumexp(dist, p, others(p, tags.size()));
  double total = 0.0;
  for (auto q : pos) total += -(-dist(p, q) - denom);
  return total / static_cast<double>(pos.size());
}

std::optional<double> anchor_loss_in(std::size_t p, const BatchView& batch, Metric metric) {
  return anchor_loss_in(p, distance_matrix(batch, metric), batch.tags);
}

std::optional<double> anchor_loss_out(std::size_t p, const BatchView& batch, Metric metric) {
  return anchor_loss_out(p, distance_matrix(batch, metric), batch.tags);
}

ContextContextValue context_context_loss(const BatchView& batch, const LossConfig& config) {
  if (batch.tokens.empty()) throw DataError("context-context loss on an empty batch");
  const Tensor dist = distance_matrix(batch, config.metric);
  ContextContextValue out;
  double total = 0.0;
  for (std::size_t p = 0; p < batch.tokens.size(); ++p) {
    auto v = config.variant == LossVariant::Icl ? anchor_loss_out(p, dist, batch.tags)
                                                : anchor_loss_in(p, dist, batch.tags);
    if (!v) continue;
    total += *v;
    ++out.anchors;
  }
  out.no_anchors = out.anchors == 0;
  out.value = out.anchors ? total / static_cast<double>(out.anchors) : 0.0;
  return out;
}

double context_label_loss(const BatchView& batch, const LossConfig& config) {
  if (batch.tokens.empty()) throw DataError("context-label loss on an empty batch");
  double total = 0.0;
  for (std::size_t p = 0; p < batch.tokens.size(); ++p) {
    const std::size_t s = batch.sentence_of[p];
    const auto& classes = batch.label_classes.at(s);
    const auto& reps = batch.label_reps.at(s);
    auto gold = std::find(classes.begin(), classes.end(), batch.tags[p]);
    if (gold == classes.end()) throw DataError("no label representative for class '" + batch.tags[p] + "'");
    std::vector<double> logits;
    for (const auto& r : reps) logits.push_back(-distance(batch.tokens[p], r, config.metric) / config.tau);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double x : logits) z += std::exp(x - mx);
    total += -(logits[static_cast<std::size_t>(gold - classes.begin())] - mx - std::log(z));
  }
  return total / static_cast<double>(batch.tokens.size());
}

double mixed_loss(const BatchView& batch, const LossConfig& config) {
  config.validate();
  double cc = 0.0, cl = 0.0;
  if (config.use_context_context) cc = context_context_loss(batch, config).value;
  if (config.use_context_label) cl = context_label_loss(batch, config);
  return config.alpha * cc + (1.0 - config.alpha) * cl;
}

// --- differentiable path ----------------------------------------------------

namespace {

Var pairwise(const GaussianRows& a, const GaussianRows& b, Metric metric) {
  return metric == Metric::SymmetrizedKl ? pairwise_js(a, b) : pairwise_sq_euclidean(a.mu, b.mu);
}

}  // namespace

Var context_context_loss(const BatchGraph& batch, const LossConfig& config, bool* no_anchors) {
  Graph& g = *batch.tokens.mu.graph();
  const std::size_t n = batch.tokens.mu.rows();
  if (n == 0 || batch.tags.size() != n) throw DataError("context-context loss: batch/tag size mismatch");

  auto offdiag = std::make_shared<std::vector<std::uint8_t>>(n * n, 1);
  auto posmask = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
  Tensor weights = Tensor::zeros({n, n});
  Tensor usable = Tensor::zeros({n, 1});
  double log_counts = 0.0;
  std::size_t anchors = 0;
  const auto pos = positive_sets(batch.tags);
  for (std::size_t p = 0; p < n; ++p) {
    (*offdiag)[p * n + p] = 0;
    if (pos[p].empty()) continue;
    ++anchors;
    usable.values[p] = 1.0;
    const double w = 1.0 / static_cast<double>(pos[p].size());
    for (auto q : pos[p]) {
      (*posmask)[p * n + q] = 1;
      weights(p, q) = w;
    }
    log_counts += std::log(static_cast<double>(pos[p].size()));
  }
  if (no_anchors) *no_anchors = anchors == 0;
  if (anchors == 0) return g.constant(Tensor::scalar(0.0));

  Var dist = pairwise(batch.tokens, batch.tokens, config.metric);
  Var neg = ag::scale(dist, -1.0);
  Var u = g.constant(std::move(usable));
  Var lse_all = ag::sum_all(ag::mul(ag::row_logsumexp(neg, offdiag), u));
  Var total;
  if (config.variant == LossVariant::Icl) {
    // mean over positives of d(p,q), plus the log-partition over q != p
    total = ag::add(ag::sum_all(ag::mul(dist, g.constant(std::move(weights)))), lse_all);
  } else {
    Var lse_pos = ag::sum_all(ag::mul(ag::row_logsumexp(neg, posmask), u));
    total = ag::add_scalar(ag::sub(lse_all, lse_pos), log_counts);
  }
  return ag::scale(total, 1.0 / static_cast<double>(anchors));
}

Var context_label_loss(const BatchGraph& batch, const LossConfig& config) {
  Graph& g = *batch.tokens.mu.graph();
  const std::size_t n = batch.tokens.mu.rows();
  if (n == 0 || batch.tags.size() != n || batch.sentence_of.size() != n) {
    throw DataError("context-label loss: batch/tag size mismatch");
  }
  // Representatives of every sentence stacked; each token only sees its own
  // sentence's block.
  std::vector<Var> mus, sigmas;
  std::vector<std::size_t> offset;
  std::size_t cols = 0;
  for (const auto& r : batch.reps) {
    offset.push_back(cols);
    mus.push_back(r.mu);
    sigmas.push_back(r.sigma2.valid() ? r.sigma2 : r.mu);
    cols += r.mu.rows();
  }
  GaussianRows reps{ag::concat(mus, 0), ag::concat(sigmas, 0)};

  auto own = std::make_shared<std::vector<std::uint8_t>>(n * cols, 0);
  Tensor gold = Tensor::zeros({n, cols});
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t s = batch.sentence_of[p];
    const auto& classes = batch.rep_classes.at(s);
    auto it = std::find(classes.begin(), classes.end(), batch.tags[p]);
    if (it == classes.end()) throw DataError("no label representative for class '" + batch.tags[p] + "'");
    for (std::size_t k = 0; k < classes.size(); ++k) (*own)[p * cols + offset[s] + k] = 1;
    gold(p, offset[s] + static_cast<std::size_t>(it - classes.begin())) = 1.0;
  }

  Var dist = pairwise(batch.tokens, reps, config.metric);
  Var lse = ag::sum_all(ag::row_logsumexp(ag::scale(dist, -1.0 / config.tau), own));
  Var gold_term = ag::scale(ag::sum_all(ag::mul(dist, g.constant(std::move(gold)))), 1.0 / config.tau);
  return ag::scale(ag::add(gold_term, lse), 1.0 / static_cast<double>(n));
}

Objective mixed_loss(const BatchGraph& batch, const LossConfig& config, LossCounters* counters) {
  config.validate();
  Graph& g = *batch.tokens.mu.graph();
  Objective out;
  Var total = g.constant(Tensor::scalar(0.0));
  if (config.use_context_context) {
    if (counters) ++counters->context_context;
    Var cc = context_context_loss(batch, config, &out.no_anchors);
    out.context_context = cc.item();
    total = ag::add(total, ag::scale(cc, config.alpha));
  }
  if (config.use_context_label) {
    if (counters) ++counters->context_label;
    Var cl = context_label_loss(batch, config);
    out.context_label = cl.item();
    total = ag::add(total, ag::scale(cl, 1.0 - config.alpha));
  }
  out.total = total;
  return out;
}

}  // namespace fsner
