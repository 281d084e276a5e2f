#include "fsner/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "fsner/encoder.hpp"
#include "fsner/gaussian.hpp"
#include "fsner/losses.hpp"
#include "fsner/random.hpp"

namespace fsner {

namespace {

const std::vector<std::string> kClasses = {"alpha", "beta", "O"};

// 4-8 tokens over three classes, split into two sentences that each carry a
// representative per class.
struct RandomBatch {
  Tensor tokens;
  Tensor reps;
  std::vector<std::string> tags;
  std::vector<std::size_t> sentence_of;
};

RandomBatch random_batch(Rng& rng, std::size_t d) {
  RandomBatch b;
  const std::size_t n = 4 + rng.below(5);
  b.tokens = Tensor::zeros({n, d});
  for (auto& v : b.tokens.values) v = rng.normal();
  b.reps = Tensor::zeros({2 * kClasses.size(), d});
  for (auto& v : b.reps.values) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    b.tags.push_back(kClasses[rng.below(kClasses.size())]);
    b.sentence_of.push_back(i < n / 2 ? 0 : 1);
  }
  // Guarantee at least one anchor with a positive.
  b.tags[1] = b.tags[0];
  return b;
}

using LossFn = std::function<Var(const BatchGraph&)>;

BatchGraph assemble(const BoundParams& params, const RandomBatch& b, Var tokens, Var reps) {
  BatchGraph batch;
  batch.tokens = project_rows(params, tokens);
  auto all = project_rows(params, reps);
  const std::size_t k = kClasses.size();
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), s * k);
    batch.reps.push_back({ag::gather_rows(all.mu, idx), ag::gather_rows(all.sigma2, idx)});
    batch.rep_classes.push_back(kClasses);
  }
  batch.tags = b.tags;
  batch.sentence_of = b.sentence_of;
  return batch;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& options) {
  LossConfig in_cfg, out_cfg, euclid_cfg;
  in_cfg.variant = LossVariant::Ocl;
  out_cfg.variant = LossVariant::Icl;
  euclid_cfg.metric = Metric::SquaredEuclidean;

  const std::vector<std::pair<std::string, LossFn>> cases = {
      {"context-context (log of mean)", [&](const BatchGraph& b) { return context_context_loss(b, in_cfg); }},
      {"context-context (mean of log)", [&](const BatchGraph& b) { return context_context_loss(b, out_cfg); }},
      {"context-label", [&](const BatchGraph& b) { return context_label_loss(b, out_cfg); }},
      {"mixed", [&](const BatchGraph& b) { return mixed_loss(b, out_cfg).total; }},
      {"mixed (squared euclidean)", [&](const BatchGraph& b) { return mixed_loss(b, euclid_cfg).total; }},
  };

  const std::vector<std::string> checked = {"projection.mu.hidden.weight", "projection.sigma.out.weight"};
  std::vector<GradcheckCase> results;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradcheckCase result{cases[c].first, options.batches, 0.0, false};
    Rng rng(derive_seed(options.seed, "gradcheck", c));
    for (std::size_t i = 0; i < options.batches; ++i) {
      const ProjectionConfig pc{options.hidden_dim, options.hidden_dim, options.embedding_dim};
      const ParamStore params = init_projection_params(pc, derive_seed(options.seed, "gradcheck-params", i));
      const RandomBatch b = random_batch(rng, options.hidden_dim);

      std::vector<Tensor> points = {b.tokens, b.reps};
      for (const auto& name : checked) points.push_back(params.at(name));
      MultiScalarFn fn = [&](Graph& g, std::span<const Var> leaves) {
        BoundParams bound = bind_params(g, params, false);
        for (std::size_t k = 0; k < checked.size(); ++k) bound[checked[k]] = leaves[2 + k];
        return cases[c].second(assemble(bound, b, leaves[0], leaves[1]));
      };
      result.max_rel_error = std::max(result.max_rel_error, finite_diff_check(fn, points, options.step));
    }
    result.passed = result.max_rel_error <= options.tolerance;
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace fsner
