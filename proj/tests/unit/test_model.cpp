#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "fsner/encoder.hpp"
#include "fsner/gaussian.hpp"
#include "fsner/random.hpp"

namespace fsner {
namespace {

struct Fixture {
  LabelMap map;
  LabelPrompt prompt;
  Vocabulary vocab;
  InputSequence input;
};

Fixture small_input(std::size_t max_len = 16) {
  Fixture f;
  f.map.set("person", "person");
  f.map.set("location", "location");
  f.prompt = build_label_prompt(LabelSet({"person", "location"}), f.map);
  Sentence s{{"ann", "saw", "rome"}, {Tag::inside("person"), Tag::outside(), Tag::inside("location")}};
  f.vocab = build_vocab(std::vector<Sentence>{s}, 1, &f.map);
  f.input = assemble_input(s, f.prompt, f.vocab, max_len);
  return f;
}

EncoderConfig small_config(std::size_t vocab_size, EncoderKind kind = EncoderKind::Transformer) {
  EncoderConfig c;
  c.kind = kind;
  c.vocab_size = vocab_size;
  c.hidden_dim = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.max_len = 16;
  c.seed = 3;
  return c;
}

TEST(Encoder, SameSeedBitIdenticalParams) {
  const auto cfg = small_config(20);
  const auto a = init_encoder_params(cfg);
  const auto b = init_encoder_params(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, t] : a) EXPECT_EQ(t.values, b.at(name).values) << name;
  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(init_encoder_params(other).at("encoder.token_embedding").values, a.at("encoder.token_embedding").values);
}

TEST(Encoder, NormGainsStartAtOneAndEmbeddingMatchesVocab) {
  const auto params = init_encoder_params(small_config(20));
  std::size_t gains = 0;
  for (const auto& [name, t] : params) {
    if (name.ends_with(".gain")) {
      ++gains;
      for (double v : t.values) EXPECT_EQ(v, 1.0) << name;
    }
  }
  EXPECT_GT(gains, 0u);
  EXPECT_EQ(params.at("encoder.token_embedding").rows(), 20u);
}

TEST(Encoder, OutputShapeAndEvalDeterminism) {
  for (auto kind : {EncoderKind::Transformer, EncoderKind::Window}) {
    auto f = small_input();
    const auto cfg = small_config(f.vocab.size(), kind);
    const auto params = init_encoder_params(cfg);
    auto run = [&] {
      Graph g;
      const auto bound = bind_params(g, params, false);
      return encode(g, bound, cfg, f.input, false).value();
    };
    const Tensor h = run();
    EXPECT_EQ(h.shape, (Shape{16, 8}));
    EXPECT_EQ(run().values, h.values);

    Graph g;
    const auto bound = bind_params(g, params, false);
    const Tensor occ = encode_occupied(g, bound, cfg, f.input, false).value();
    ASSERT_EQ(occ.rows(), f.input.occupied);
    for (std::size_t r = 0; r < occ.rows(); ++r) {
      for (std::size_t c = 0; c < occ.cols(); ++c) EXPECT_EQ(occ(r, c), h(r, c));
    }
  }
}

TEST(Encoder, PaddingIsNeverAttended) {
  auto f = small_input();
  const auto cfg = small_config(f.vocab.size());
  const auto params = init_encoder_params(cfg);
  Graph g;
  EncoderTrace trace;
  encode(g, bind_params(g, params, false), cfg, f.input, false, &trace);
  ASSERT_FALSE(trace.attention.empty());
  for (const auto& a : trace.attention) {
    const Tensor& p = a.value();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      for (std::size_t c = f.input.occupied; c < p.cols(); ++c) EXPECT_EQ(p(r, c), 0.0);
    }
  }
}

TEST(Encoder, DropoutOnlyInTrainMode) {
  auto f = small_input();
  auto cfg = small_config(f.vocab.size());
  cfg.dropout = 0.3;
  const auto params = init_encoder_params(cfg);
  auto run = [&](bool train, std::uint64_t seed) {
    Graph g(seed);
    return encode(g, bind_params(g, params, false), cfg, f.input, train).value().values;
  };
  EXPECT_EQ(run(false, 1), run(false, 2));
  EXPECT_NE(run(true, 1), run(true, 2));
  EXPECT_EQ(run(true, 1), run(true, 1));
}

TEST(Encoder, EmbeddingGradientMatchesFiniteDifferences) {
  for (auto kind : {EncoderKind::Transformer, EncoderKind::Window}) {
    auto f = small_input(12);
    auto cfg = small_config(f.vocab.size(), kind);
    cfg.max_len = 12;
    const auto params = init_encoder_params(cfg);
    // A fixed random readout keeps the objective from being invariant under
    // layer normalization (sum of a normalized row is always zero).
    Rng rng(2);
    std::vector<double> w(12 * 8);
    for (auto& x : w) x = rng.normal();
    const Tensor readout({12, 8}, w);
    const ScalarFn fn = [&](Graph& g, Var table) {
      auto bound = bind_params(g, params, false);
      bound["encoder.token_embedding"] = table;
      return ag::sum_all(ag::mul(encode(g, bound, cfg, f.input, false), g.constant(readout)));
    };
    EXPECT_LE(finite_diff_check(fn, params.at("encoder.token_embedding"), 1e-6), 1e-4) << to_string(kind);
  }
}

TEST(Encoder, InvalidConfigsNameTheField) {
  auto cfg = small_config(20);
  cfg.heads = 3;
  try {
    cfg.validate();
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
  }
}

// --- Gaussian projection and divergences ---------------------------------------

TEST(Projection, ZeroWeightsGiveSoftplusFloorVariance) {
  ProjectionConfig cfg{4, 3, 5};
  auto params = init_projection_params(cfg, 1);
  for (auto& [name, t] : params) std::fill(t.values.begin(), t.values.end(), 0.0);
  const auto e = project(params, std::vector<double>{0.3, -2.0, 1.0, 7.0});
  for (double m : e.mu) EXPECT_EQ(m, 0.0);
  for (double s : e.sigma2) EXPECT_NEAR(s, std::log(2.0) + 1e-6, 1e-15);
  EXPECT_NEAR(e.sigma2[0], 0.693148, 1e-6);
}

TEST(Projection, VariancePositiveAndDefaultWidth) {
  ProjectionConfig cfg;
  EXPECT_EQ(cfg.output_dim, 128u);
  const auto params = init_projection_params(cfg, 9);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> h(cfg.input_dim);
    for (auto& x : h) x = rng.normal() * 50.0;
    const auto e = project(params, h);
    ASSERT_EQ(e.mu.size(), 128u);
    for (double s : e.sigma2) ASSERT_GT(s, 0.0);
  }
}

TEST(Projection, RowsMatchSingleVectorPath) {
  ProjectionConfig cfg{6, 5, 4};
  const auto params = init_projection_params(cfg, 2);
  Rng rng(8);
  std::vector<double> h(3 * 6);
  for (auto& x : h) x = rng.normal();
  Graph g;
  const auto rows = project_rows(bind_params(g, params, false), g.constant(Tensor({3, 6}, h)));
  for (std::size_t r = 0; r < 3; ++r) {
    const auto e = project(params, std::span<const double>(h).subspan(r * 6, 6));
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(rows.mu.value()(r, k), e.mu[k], 1e-14);
      EXPECT_NEAR(rows.sigma2.value()(r, k), e.sigma2[k], 1e-14);
    }
  }
}

GaussianEmbedding g1(double mu, double var) { return {{mu}, {var}}; }

TEST(Divergence, KlAgainstNumericalIntegration) {
  EXPECT_NEAR(kl(g1(0, 1), g1(1, 1)), 0.5, 1e-12);
  EXPECT_NEAR(oracle::kl_1d_integrated(0, 1, 1, 1), 0.5, 1e-6);
  const double expected = 0.5 * (std::log(4.0) - 0.75);
  EXPECT_NEAR(expected, 0.318147, 1e-6);
  EXPECT_NEAR(kl(g1(0, 1), g1(0, 4)), expected, 1e-12);
  EXPECT_NEAR(oracle::kl_1d_integrated(0, 1, 0, 4), expected, 1e-6);
}

TEST(Divergence, IdentityAndSymmetry) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    GaussianEmbedding p, q;
    for (int k = 0; k < 6; ++k) {
      p.mu.push_back(rng.normal());
      q.mu.push_back(rng.normal());
      p.sigma2.push_back(0.1 + rng.uniform() * 3);
      q.sigma2.push_back(0.1 + rng.uniform() * 3);
    }
    EXPECT_EQ(js(p, q), js(q, p));
    EXPECT_GE(kl(p, q), 0.0);
    EXPECT_LE(std::abs(kl(p, p)), 1e-12);
    EXPECT_LE(std::abs(js(p, p)), 1e-12);
  }
  EXPECT_NEAR(js(g1(0, 1), g1(1, 1)), 0.5, 1e-12);
}

TEST(Divergence, InvalidInputsRejected) {
  EXPECT_THROW(kl(g1(0, 0.0), g1(0, 1)), DataError);
  EXPECT_THROW(kl(GaussianEmbedding{{0, 0}, {1, 1}}, g1(0, 1)), DataError);
}

TEST(Divergence, SquaredEuclideanMatchesLoop) {
  EXPECT_EQ(sq_euclidean(std::vector<double>{0, 0}, std::vector<double>{3, 4}), 25.0);
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(7), b(7);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    double loop = 0.0;
    for (std::size_t k = 0; k < 7; ++k) loop += (a[k] - b[k]) * (a[k] - b[k]);
    ASSERT_NEAR(sq_euclidean(a, b), loop, 1e-12);
    ASSERT_EQ(sq_euclidean(a, a), 0.0);
  }
}

TEST(Divergence, PairwiseMatricesMatchScalarForms) {
  Rng rng(21);
  auto rand = [&](std::size_t r, std::size_t c, bool positive) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = positive ? 0.2 + rng.uniform() * 2 : rng.normal();
    return Tensor({r, c}, v);
  };
  Graph g;
  GaussianRows a{g.constant(rand(3, 4, false)), g.constant(rand(3, 4, true))};
  GaussianRows b{g.constant(rand(5, 4, false)), g.constant(rand(5, 4, true))};
  const Tensor d = pairwise_js(a, b).value();
  const Tensor e = pairwise_sq_euclidean(a.mu, b.mu).value();
  auto emb = [](const GaussianRows& r, std::size_t i) {
    GaussianEmbedding out;
    const auto mu = r.mu.value().row(i);
    const auto s = r.sigma2.value().row(i);
    out.mu.assign(mu.begin(), mu.end());
    out.sigma2.assign(s.begin(), s.end());
    return out;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(d(i, j), js(emb(a, i), emb(b, j)), 1e-12);
      EXPECT_NEAR(e(i, j), sq_euclidean(emb(a, i).mu, emb(b, j).mu), 1e-12);
    }
  }
}

}  // namespace
}  // namespace fsner
