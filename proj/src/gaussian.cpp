#include "fsner/gaussian.hpp"

#include <cmath>

#include "fsner/random.hpp"

namespace fsner {

void ProjectionConfig::validate() const {
  if (input_dim == 0) throw UsageError("projection.input_dim must be positive");
  if (hidden_dim == 0) throw UsageError("projection.hidden_dim must be positive");
  if (output_dim == 0) throw UsageError("projection.output_dim must be positive");
}

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.values) v = rng.uniform(-a, a);
  return t;
}

Var linear(const BoundParams& p, const std::string& prefix, Var x) {
  return ag::add(ag::matmul(x, param(p, prefix + ".weight")), param(p, prefix + ".bias"));
}

Var head(const BoundParams& p, const std::string& prefix, Var h) {
  return linear(p, prefix + ".out", ag::gelu(linear(p, prefix + ".hidden", h)));
}

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DataError(std::string(what) + ": dimension mismatch " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  }
}

void check_gaussian(const GaussianEmbedding& g) {
  if (g.mu.size() != g.sigma2.size()) throw DataError("gaussian: mu and sigma2 lengths differ");
  for (double s : g.sigma2) {
    if (!(s > 0.0)) throw DataError("gaussian: variance must be strictly positive");
  }
}

Var ones(Graph& g, std::size_t rows) { return g.constant(Tensor::full({rows, 1}, 1.0)); }

}  // namespace

ParamStore init_projection_params(const ProjectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore p;
  for (const std::string head_name : {"projection.mu", "projection.sigma"}) {
    p[head_name + ".hidden.weight"] = xavier(cfg.input_dim, cfg.hidden_dim, derive_seed(seed, head_name + ".hidden"));
    p[head_name + ".hidden.bias"] = Tensor::zeros({cfg.hidden_dim});
    p[head_name + ".out.weight"] = xavier(cfg.hidden_dim, cfg.output_dim, derive_seed(seed, head_name + ".out"));
    p[head_name + ".out.bias"] = Tensor::zeros({cfg.output_dim});
  }
  return p;
}

GaussianRows project_rows(const BoundParams& params, Var hidden) {
  Var mu = head(params, "projection.mu", hidden);
  Var sigma2 = ag::add_scalar(ag::softplus(head(params, "projection.sigma", hidden)), kSigmaFloor);
  return {mu, sigma2};
}

GaussianEmbedding project(const ParamStore& params, std::span<const double> hidden) {
  Graph g;
  auto bound = bind_params(g, params, false);
  Var h = g.constant(Tensor({1, hidden.size()}, {hidden.begin(), hidden.end()}));
  auto rows = project_rows(bound, h);
  return {rows.mu.value().values, rows.sigma2.value().values};
}

double kl(const GaussianEmbedding& p, const GaussianEmbedding& q) {
  check_gaussian(p);
  check_gaussian(q);
  check_pair(p.mu, q.mu, "kl");
  double total = 0.0;
  for (std::size_t d = 0; d < p.mu.size(); ++d) {
    const double diff = p.mu[d] - q.mu[d];
    total += std::log(q.sigma2[d] / p.sigma2[d]) + (p.sigma2[d] + diff * diff) / q.sigma2[d] - 1.0;
  }
  return 0.5 * total;
}

double js(const GaussianEmbedding& p, const GaussianEmbedding& q) { return 0.5 * (kl(p, q) + kl(q, p)); }

double sq_euclidean(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "sq_euclidean");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return total;
}

Var kl(Var mu_p, Var sigma2_p, Var mu_q, Var sigma2_q) {
  const double l = static_cast<double>(mu_p.value().size());
  Var log_ratio = ag::sub(ag::log(sigma2_q), ag::log(sigma2_p));
  Var diff2 = ag::square(ag::sub(mu_p, mu_q));
  Var quad = ag::mul(ag::add(sigma2_p, diff2), ag::reciprocal(sigma2_q));
  return ag::scale(ag::add_scalar(ag::sum_all(ag::add(log_ratio, quad)), -l), 0.5);
}

Var js(Var mu_p, Var sigma2_p, Var mu_q, Var sigma2_q) {
  return ag::scale(ag::add(kl(mu_p, sigma2_p, mu_q, sigma2_q), kl(mu_q, sigma2_q, mu_p, sigma2_p)), 0.5);
}

Var pairwise_js(const GaussianRows& a, const GaussianRows& b) {
  // 4 * JS(p, q) + 2l = sum_d [ (mu_p^2 + s_p)/s_q + (mu_q^2 + s_q)/s_p
  //                             - 2 mu_p mu_q (1/s_p + 1/s_q) + mu_p^2/s_p + mu_q^2/s_q ]
  // which factors as F_a * G_b^T.
  Graph& g = *a.mu.graph();
  const std::size_t na = a.mu.rows(), nb = b.mu.rows();
  const double l = static_cast<double>(a.mu.cols());
  if (a.mu.cols() != b.mu.cols()) throw ShapeError("pairwise_js", a.mu.shape(), b.mu.shape());

  Var ma2 = ag::square(a.mu), mb2 = ag::square(b.mu);
  Var ra = ag::reciprocal(a.sigma2), rb = ag::reciprocal(b.sigma2);
  Var mara = ag::mul(a.mu, ra), mbrb = ag::mul(b.mu, rb);

  const Var left[] = {ag::add(ma2, a.sigma2), ra, mara, a.mu, ag::sum(ag::mul(ma2, ra), 1), ones(g, na)};
  const Var right[] = {rb, ag::add(mb2, b.sigma2), ag::scale(b.mu, -2.0), ag::scale(mbrb, -2.0), ones(g, nb),
                       ag::sum(ag::mul(mb2, rb), 1)};
  Var cross = ag::matmul(ag::concat(left, 1), ag::transpose(ag::concat(right, 1)));
  return ag::add_scalar(ag::scale(cross, 0.25), -0.5 * l);
}

Var pairwise_sq_euclidean(Var a, Var b) {
  Graph& g = *a.graph();
  if (a.cols() != b.cols()) throw ShapeError("pairwise_sq_euclidean", a.shape(), b.shape());
  const Var left[] = {ag::sum(ag::square(a), 1), a, ones(g, a.rows())};
  const Var right[] = {ones(g, b.rows()), ag::scale(b, -2.0), ag::sum(ag::square(b), 1)};
  return ag::matmul(ag::concat(left, 1), ag::transpose(ag::concat(right, 1)));
}

}  // namespace fsner
