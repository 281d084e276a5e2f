#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fsner/encoder.hpp"
#include "fsner/tensor.hpp"

namespace fsner {

inline constexpr std::size_t kDefaultEmbeddingDim = 128;
inline constexpr double kSigmaFloor = 1e-6;

// f_mu and f_sigma: Linear -> GELU -> Linear, from the encoder width to the
// Gaussian embedding width. The variance head ends in softplus + floor.
struct ProjectionConfig {
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t output_dim = kDefaultEmbeddingDim;

  void validate() const;
  friend bool operator==(const ProjectionConfig&, const ProjectionConfig&) = default;
};

ParamStore init_projection_params(const ProjectionConfig& config, std::uint64_t seed);

// Diagonal Gaussian.
struct GaussianEmbedding {
  std::vector<double> mu;
  std::vector<double> sigma2;
};

GaussianEmbedding project(const ParamStore& params, std::span<const double> hidden);

struct GaussianRows {
  Var mu;      // [n, l]
  Var sigma2;  // [n, l]
};

GaussianRows project_rows(const BoundParams& params, Var hidden);

// KL(p || q) for diagonal Gaussians. DataError on non-positive variance or
// mismatched dimensions.
double kl(const GaussianEmbedding& p, const GaussianEmbedding& q);
// Symmetrized KL, 0.5 * (KL(p||q) + KL(q||p)). This is the Jeffreys
// divergence, which the contrastive losses call "JS".
double js(const GaussianEmbedding& p, const GaussianEmbedding& q);
double sq_euclidean(std::span<const double> a, std::span<const double> b);

// Differentiable forms over single rows ([1, l] Vars).
Var kl(Var mu_p, Var sigma2_p, Var mu_q, Var sigma2_q);
Var js(Var mu_p, Var sigma2_p, Var mu_q, Var sigma2_q);

// Pairwise [n_a, n_b] distance matrices, built from matmuls so batches of a
// few hundred tokens stay cheap.
Var pairwise_js(const GaussianRows& a, const GaussianRows& b);
Var pairwise_sq_euclidean(Var a, Var b);

}  // namespace fsner
