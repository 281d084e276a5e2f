#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "fsner/losses.hpp"
#include "fsner/random.hpp"

namespace fsner {
namespace {

const double kLog1pInvE = std::log(1.0 + std::exp(-1.0));  // 0.313262

GaussianEmbedding point(std::vector<double> mu) {
  GaussianEmbedding e;
  e.sigma2.assign(mu.size(), 1.0);
  e.mu = std::move(mu);
  return e;
}

Tensor dist3(double d01, double d02, double d12) {
  return Tensor({3, 3}, {0, d01, d02, d01, 0, d12, d02, d12, 0});
}

TEST(AnchorLoss, TwoSameTagTokensGiveZero) {
  const std::vector<std::string> tags = {"a", "a"};
  const Tensor d({2, 2}, {0, 3.7, 3.7, 0});
  EXPECT_NEAR(*anchor_loss_in(0, d, tags), 0.0, 1e-15);
  EXPECT_NEAR(*anchor_loss_out(0, d, tags), 0.0, 1e-15);
}

TEST(AnchorLoss, SinglePositiveWorkedExample) {
  const std::vector<std::string> tags = {"a", "a", "b"};
  const Tensor d = dist3(1.0, 2.0, 5.0);
  EXPECT_NEAR(kLog1pInvE, 0.313262, 1e-6);
  EXPECT_NEAR(*anchor_loss_in(0, d, tags), kLog1pInvE, 1e-12);
  EXPECT_NEAR(*anchor_loss_out(0, d, tags), kLog1pInvE, 1e-12);
}

TEST(AnchorLoss, MeanOfLogDominatesLogOfMean) {
  // Positives at distance 1 and 3, one negative at 2.
  const std::vector<std::string> tags = {"a", "a", "a", "b"};
  const Tensor d({4, 4}, {0, 1, 3, 2, 1, 0, 1, 1, 3, 1, 0, 1, 2, 1, 1, 0});
  const double in = *anchor_loss_in(0, d, tags);
  const double out = *anchor_loss_out(0, d, tags);
  EXPECT_GE(out, in);
  const std::vector<std::vector<double>> dd = {{0, 1, 3, 2}, {1, 0, 1, 1}, {3, 1, 0, 1}, {2, 1, 1, 0}};
  EXPECT_NEAR(in, oracle::anchor_in(0, dd, {0, 0, 0, 1}), 1e-12);
  EXPECT_NEAR(out, oracle::anchor_out(0, dd, {0, 0, 0, 1}), 1e-12);
}

TEST(AnchorLoss, NoPositivesIsSkipped) {
  const std::vector<std::string> tags = {"a", "b"};
  const Tensor d({2, 2}, {0, 1, 1, 0});
  EXPECT_FALSE(anchor_loss_in(0, d, tags).has_value());
  EXPECT_FALSE(anchor_loss_out(1, d, tags).has_value());
}

TEST(AnchorLoss, PositiveSetsExcludeSelf) {
  const std::vector<std::string> tags = {"a", "b", "a", "a"};
  const auto sets = positive_sets(tags);
  EXPECT_EQ(sets[0], (std::vector<std::size_t>{2, 3}));
  EXPECT_TRUE(sets[1].empty());
}

BatchView one_sentence(std::vector<GaussianEmbedding> tokens, std::vector<std::string> tags,
                       std::vector<GaussianEmbedding> reps, std::vector<std::string> classes) {
  BatchView b;
  b.sentence_of.assign(tokens.size(), 0);
  b.tokens = std::move(tokens);
  b.tags = std::move(tags);
  b.label_reps = {std::move(reps)};
  b.label_classes = {std::move(classes)};
  return b;
}

TEST(ContextContext, EqualDistancesGiveLogTwo) {
  const auto e = point({0.5, -1.0});
  const auto b = one_sentence({e, e, e}, {"a", "a", "a"}, {e, e}, {"a", "O"});
  for (auto variant : {LossVariant::Icl, LossVariant::Ocl}) {
    LossConfig cfg;
    cfg.variant = variant;
    EXPECT_NEAR(context_context_loss(b, cfg).value, std::log(2.0), 1e-12);
  }
}

TEST(ContextContext, NoPositivesAnywhereGivesZeroAndFlag) {
  const auto b = one_sentence({point({0}), point({1})}, {"a", "b"}, {point({0}), point({1}), point({2})},
                              {"a", "b", "O"});
  const auto v = context_context_loss(b, LossConfig{});
  EXPECT_EQ(v.value, 0.0);
  EXPECT_TRUE(v.no_anchors);
}

TEST(ContextContext, PermutationInvariant) {
  Rng rng(4);
  std::vector<GaussianEmbedding> toks;
  std::vector<std::string> tags;
  for (int i = 0; i < 7; ++i) {
    GaussianEmbedding e{{rng.normal(), rng.normal()}, {0.5 + rng.uniform(), 0.5 + rng.uniform()}};
    toks.push_back(e);
    tags.push_back(i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "O"));
  }
  const auto b = one_sentence(toks, tags, {}, {});
  std::vector<std::size_t> perm = {3, 6, 0, 5, 1, 4, 2};
  std::vector<GaussianEmbedding> ptoks;
  std::vector<std::string> ptags;
  for (auto i : perm) {
    ptoks.push_back(toks[i]);
    ptags.push_back(tags[i]);
  }
  const auto pb = one_sentence(ptoks, ptags, {}, {});
  for (auto variant : {LossVariant::Icl, LossVariant::Ocl}) {
    LossConfig cfg;
    cfg.variant = variant;
    EXPECT_NEAR(context_context_loss(b, cfg).value, context_context_loss(pb, cfg).value, 1e-12);
  }
}

TEST(ContextLabel, WorkedExample) {
  // Squared Euclidean distances 0.5 to the gold representative, 1.5 to the other.
  const auto b = one_sentence({point({0.0})}, {"a"}, {point({std::sqrt(0.5)}), point({std::sqrt(1.5)})},
                              {"a", "O"});
  LossConfig cfg;
  cfg.metric = Metric::SquaredEuclidean;
  EXPECT_NEAR(context_label_loss(b, cfg), kLog1pInvE, 1e-12);
}

TEST(ContextLabel, UniformDistancesGiveLogClassCount) {
  const auto e = point({1.0, 2.0});
  const auto b = one_sentence({e, e}, {"a", "O"}, {e, e, e, e}, {"a", "b", "c", "O"});
  EXPECT_NEAR(context_label_loss(b, LossConfig{}), std::log(4.0), 1e-12);
}

TEST(ContextLabel, MissingRepresentativeIsDataError) {
  const auto b = one_sentence({point({0})}, {"zzz"}, {point({0})}, {"O"});
  EXPECT_THROW(context_label_loss(b, LossConfig{}), DataError);
}

TEST(LossConfig, DefaultTemperatureIsOne) { EXPECT_EQ(LossConfig{}.tau, 1.0); }

TEST(LossConfig, AlphaOutsideUnitIntervalRejected) {
  LossConfig cfg;
  cfg.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(), UsageError);
}

// Random batch spanning two sentences, with gold classes present in both
// sentences' representatives.
BatchView random_batch(Rng& rng, std::size_t n, std::size_t l = 3) {
  const std::vector<std::string> classes = {"alpha", "beta", "O"};
  auto emb = [&] {
    GaussianEmbedding e;
    for (std::size_t k = 0; k < l; ++k) {
      e.mu.push_back(rng.normal());
      e.sigma2.push_back(0.3 + 2 * rng.uniform());
    }
    return e;
  };
  BatchView b;
  for (std::size_t i = 0; i < n; ++i) {
    b.tokens.push_back(emb());
    b.tags.push_back(classes[rng.below(3)]);
    b.sentence_of.push_back(i < n / 2 ? 0 : 1);
  }
  for (int s = 0; s < 2; ++s) {
    b.label_reps.push_back({emb(), emb(), emb()});
    b.label_classes.push_back(classes);
  }
  return b;
}

GaussianRows rows_of(Graph& g, const std::vector<GaussianEmbedding>& es) {
  const std::size_t l = es.at(0).mu.size();
  Tensor mu({es.size(), l}, std::vector<double>(es.size() * l));
  Tensor s2 = mu;
  for (std::size_t i = 0; i < es.size(); ++i) {
    for (std::size_t k = 0; k < l; ++k) {
      mu(i, k) = es[i].mu[k];
      s2(i, k) = es[i].sigma2[k];
    }
  }
  return {g.parameter(mu), g.parameter(s2)};
}

BatchGraph to_graph(Graph& g, const BatchView& v) {
  BatchGraph b;
  b.tokens = rows_of(g, v.tokens);
  b.tags = v.tags;
  b.sentence_of = v.sentence_of;
  for (const auto& r : v.label_reps) b.reps.push_back(rows_of(g, r));
  b.rep_classes = v.label_classes;
  return b;
}

TEST(Differentiable, AgreesWithReferenceOnRandomBatches) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto view = random_batch(rng, 4 + rng.below(5));
    for (auto metric : {Metric::SymmetrizedKl, Metric::SquaredEuclidean}) {
      for (auto variant : {LossVariant::Icl, LossVariant::Ocl}) {
        LossConfig cfg;
        cfg.metric = metric;
        cfg.variant = variant;
        cfg.alpha = 0.3;
        Graph g;
        const auto batch = to_graph(g, view);
        const auto obj = mixed_loss(batch, cfg);
        EXPECT_NEAR(obj.total.item(), mixed_loss(view, cfg), 1e-10);
        EXPECT_NEAR(*obj.context_context, context_context_loss(view, cfg).value, 1e-10);
        EXPECT_NEAR(*obj.context_label, context_label_loss(view, cfg), 1e-10);
      }
    }
  }
}

TEST(Mixed, EndpointsEqualOneTermExactly) {
  Rng rng(2);
  const auto view = random_batch(rng, 8);
  LossConfig cfg;
  cfg.alpha = 1.0;
  {
    Graph g;
    const auto obj = mixed_loss(to_graph(g, view), cfg);
    EXPECT_EQ(obj.total.item(), context_context_loss(to_graph(g, view), cfg).item());
  }
  cfg.alpha = 0.0;
  {
    Graph g;
    const auto obj = mixed_loss(to_graph(g, view), cfg);
    EXPECT_EQ(obj.total.item(), context_label_loss(to_graph(g, view), cfg).item());
  }
}

TEST(Mixed, DisabledTermIsNeverEvaluated) {
  Rng rng(3);
  const auto view = random_batch(rng, 8);
  LossConfig cfg;
  LossCounters counters;
  cfg.use_context_context = false;
  Graph g;
  const auto obj = mixed_loss(to_graph(g, view), cfg, &counters);
  EXPECT_FALSE(obj.context_context.has_value());
  EXPECT_EQ(counters.context_context, 0u);
  EXPECT_EQ(counters.context_label, 1u);
  cfg.use_context_label = false;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Mixed, WeightedCombination) {
  Rng rng(7);
  const auto view = random_batch(rng, 6);
  LossConfig cfg;
  cfg.alpha = 0.5;
  Graph g;
  const auto obj = mixed_loss(to_graph(g, view), cfg);
  EXPECT_NEAR(obj.total.item(), 0.5 * *obj.context_context + 0.5 * *obj.context_label, 1e-12);
  // The arithmetic of the combination itself, with components 0.4 and 0.8.
  EXPECT_NEAR(cfg.alpha * 0.4 + (1 - cfg.alpha) * 0.8, 0.6, 1e-15);
}

TEST(Differentiable, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const auto view = random_batch(rng, 6);
    for (auto variant : {LossVariant::Icl, LossVariant::Ocl}) {
      LossConfig cfg;
      cfg.variant = variant;
      // Perturb the token means; everything else is held fixed.
      Graph probe;
      const Tensor mu0 = to_graph(probe, view).tokens.mu.value();
      const ScalarFn fn = [&](Graph& g, Var mu) {
        auto b = to_graph(g, view);
        b.tokens.mu = mu;
        return mixed_loss(b, cfg).total;
      };
      EXPECT_LE(finite_diff_check(fn, mu0, 1e-6), 1e-6);
    }
  }
}

}  // namespace
}  // namespace fsner
