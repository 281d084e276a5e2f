#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsner/gaussian.hpp"
#include "fsner/tensor.hpp"

namespace fsner {

// OCL: positives averaged inside the log. ICL: log averaged over positives.
enum class LossVariant { Ocl, Icl };
enum class Metric { SymmetrizedKl, SquaredEuclidean };

std::string_view to_string(LossVariant v) noexcept;
std::string_view to_string(Metric m) noexcept;
LossVariant loss_variant_from_string(std::string_view s);
Metric metric_from_string(std::string_view s);

struct LossConfig {
  double alpha = 0.5;
  double tau = 1.0;
  LossVariant variant = LossVariant::Icl;
  Metric metric = Metric::SymmetrizedKl;
  bool use_context_context = true;
  bool use_context_label = true;
  // Fraction of O tokens kept in a batch; 1.0 keeps all.
  double o_subsample = 1.0;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// --- Reference evaluation over explicit embeddings -------------------------

// All valid context tokens of a batch, their classes, and each sentence's
// label representatives (one per prompt class).
struct BatchView {
  std::vector<GaussianEmbedding> tokens;
  std::vector<std::string> tags;
  std::vector<std::size_t> sentence_of;
  std::vector<std::vector<GaussianEmbedding>> label_reps;
  std::vector<std::vector<std::string>> label_classes;
};

double distance(const GaussianEmbedding& p, const GaussianEmbedding& q, Metric metric);

// Indices q != p with the same tag as p.
std::vector<std::vector<std::size_t>> positive_sets(std::span<const std::string> tags);

// Per-anchor losses over a precomputed [n, n] distance matrix. nullopt when
// the anchor has no positives (the anchor is skipped).
std::optional<double> anchor_loss_in(std::size_t p, const Tensor& dist, std::span<const std::string> tags);
std::optional<double> anchor_loss_out(std::size_t p, const Tensor& dist, std::span<const std::string> tags);
std::optional<double> anchor_loss_in(std::size_t p, const BatchView& batch, Metric metric);
std::optional<double> anchor_loss_out(std::size_t p, const BatchView& batch, Metric metric);

struct ContextContextValue {
  double value = 0.0;
  std::size_t anchors = 0;
  bool no_anchors = false;  // every anchor lacked positives; value is 0
};

ContextContextValue context_context_loss(const BatchView& batch, const LossConfig& config);
// Throws DataError when a token's gold class has no representative.
double context_label_loss(const BatchView& batch, const LossConfig& config);
double mixed_loss(const BatchView& batch, const LossConfig& config);

// --- Differentiable evaluation ---------------------------------------------

struct BatchGraph {
  GaussianRows tokens;  // sigma2 unused for the Euclidean metric
  std::vector<std::string> tags;
  std::vector<std::size_t> sentence_of;
  std::vector<GaussianRows> reps;  // per sentence, [classes, l]
  std::vector<std::vector<std::string>> rep_classes;
};

// Counts objective evaluations so callers can assert which terms ran.
struct LossCounters {
  std::size_t context_context = 0;
  std::size_t context_label = 0;
};

struct Objective {
  Var total;
  std::optional<double> context_context;
  std::optional<double> context_label;
  bool no_anchors = false;
};

Var context_context_loss(const BatchGraph& batch, const LossConfig& config, bool* no_anchors = nullptr);
Var context_label_loss(const BatchGraph& batch, const LossConfig& config);
// alpha * L_cc + (1 - alpha) * L_cl; a disabled term is not evaluated.
Objective mixed_loss(const BatchGraph& batch, const LossConfig& config, LossCounters* counters = nullptr);

}  // namespace fsner
