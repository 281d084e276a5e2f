#include "fsner/encoder.hpp"

#include <cmath>
#include <memory>

#include "fsner/random.hpp"

namespace fsner {

BoundParams bind_params(Graph& graph, const ParamStore& params, bool trainable) {
  BoundParams bound;
  for (const auto& [name, t] : params) {
    bound.emplace(name, trainable ? graph.parameter(t) : graph.constant(t));
  }
  return bound;
}

const Var& param(const BoundParams& bound, std::string_view name) {
  auto it = bound.find(name);
  if (it == bound.end()) throw DataError("missing parameter '" + std::string(name) + "'");
  return it->second;
}

std::string_view to_string(EncoderKind kind) noexcept {
  return kind == EncoderKind::Transformer ? "transformer" : "window";
}

EncoderKind encoder_kind_from_string(std::string_view s) {
  if (s == "transformer") return EncoderKind::Transformer;
  if (s == "window") return EncoderKind::Window;
  throw UsageError("encoder: unknown kind '" + std::string(s) + "'");
}

void EncoderConfig::validate() const {
  if (vocab_size < 4) throw UsageError("encoder.vocab_size must cover the reserved tokens");
  if (hidden_dim == 0) throw UsageError("encoder.hidden_dim must be positive");
  if (max_len < 4) throw UsageError("encoder.max_len must be at least 4");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("encoder.dropout must be in [0, 1)");
  if (!(position_scale >= 0.0)) throw UsageError("encoder.position_scale must be non-negative");
  if (kind == EncoderKind::Transformer) {
    if (layers == 0) throw UsageError("encoder.layers must be positive");
    if (heads == 0 || hidden_dim % heads != 0) throw UsageError("encoder.heads must divide encoder.hidden_dim");
    if (ff_dim == 0) throw UsageError("encoder.ff_dim must be positive");
  } else if (window == 0) {
    throw UsageError("encoder.window must be positive");
  }
}

namespace {

Tensor uniform(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.values) v = rng.uniform(-bound, bound);
  return t;
}

Tensor xavier(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), seed);
}

void add_linear(ParamStore& p, const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed) {
  p[prefix + ".weight"] = xavier(in, out, derive_seed(seed, prefix + ".weight"));
  p[prefix + ".bias"] = Tensor::zeros({out});
}

void add_norm(ParamStore& p, const std::string& prefix, std::size_t dim) {
  p[prefix + ".gain"] = Tensor::full({dim}, 1.0);
  p[prefix + ".bias"] = Tensor::zeros({dim});
}

std::string layer_prefix(std::size_t i) { return "encoder.layer" + std::to_string(i); }

Var linear(const BoundParams& p, const std::string& prefix, Var x) {
  return ag::add(ag::matmul(x, param(p, prefix + ".weight")), param(p, prefix + ".bias"));
}

Var norm(const BoundParams& p, const std::string& prefix, Var x) {
  return ag::add(ag::mul(ag::layer_norm(x), param(p, prefix + ".gain")), param(p, prefix + ".bias"));
}

Var embed(Graph& g, const BoundParams& p, const EncoderConfig& cfg, const InputSequence& in, std::size_t n) {
  std::vector<std::size_t> ids(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = in.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                      " is outside the vocabulary of size " + std::to_string(cfg.vocab_size));
    }
    ids[i] = static_cast<std::size_t>(id);
    positions[i] = i;
  }
  Var x = ag::gather_rows(param(p, "encoder.token_embedding"), std::move(ids));
  if (cfg.kind == EncoderKind::Transformer) {
    x = ag::add(x, ag::gather_rows(param(p, "encoder.position_embedding"), std::move(positions)));
  }
  (void)g;
  return norm(p, "encoder.embedding_norm", x);
}

Var transformer_layers(Graph& g, const BoundParams& p, const EncoderConfig& cfg, const InputSequence& in,
                       std::size_t n, Var x, bool train, EncoderTrace* trace) {
  Mask key_mask;
  if (n > in.occupied) {
    auto m = std::make_shared<std::vector<std::uint8_t>>(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) (*m)[i * n + j] = in.attention_mask[j];
    }
    key_mask = std::move(m);
  }
  const std::size_t dh = cfg.hidden_dim / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  (void)g;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto pre = layer_prefix(l);
    Var q = linear(p, pre + ".attention.query", x);
    Var k = linear(p, pre + ".attention.key", x);
    Var v = linear(p, pre + ".attention.value", x);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Var qh = ag::slice_cols(q, h * dh, dh);
      Var kh = ag::slice_cols(k, h * dh, dh);
      Var vh = ag::slice_cols(v, h * dh, dh);
      Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt_dh);
      Var probs = ag::row_softmax(scores, key_mask);
      if (trace) trace->attention.push_back(probs);
      heads.push_back(ag::matmul(probs, vh));
    }
    Var attended = linear(p, pre + ".attention.output", ag::concat(heads, 1));
    x = norm(p, pre + ".attention_norm", ag::add(x, ag::dropout(attended, cfg.dropout, train)));
    Var ff = linear(p, pre + ".ffn.out", ag::gelu(linear(p, pre + ".ffn.in", x)));
    x = norm(p, pre + ".ffn_norm", ag::add(x, ag::dropout(ff, cfg.dropout, train)));
  }
  return x;
}

Var window_layer(Graph& g, const BoundParams& p, const EncoderConfig& cfg, const InputSequence& in, std::size_t n,
                 Var x, bool train) {
  // Row i averages the valid positions within `window` of i, excluding i.
  Tensor avg = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
    const std::size_t hi = std::min(n - 1, i + cfg.window);
    std::size_t count = 0;
    for (std::size_t j = lo; j <= hi; ++j) count += (j != i && in.attention_mask[j]) ? 1 : 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j != i && in.attention_mask[j]) avg(i, j) = 1.0 / static_cast<double>(count);
    }
  }
  Var ctx = ag::matmul(g.constant(std::move(avg)), x);
  Var mixed = ag::add(ag::add(ag::matmul(x, param(p, "encoder.window.self.weight")),
                              ag::matmul(ctx, param(p, "encoder.window.context.weight"))),
                      param(p, "encoder.window.bias"));
  return norm(p, "encoder.window_norm", ag::add(x, ag::dropout(ag::gelu(mixed), cfg.dropout, train)));
}

Var encode_rows(Graph& g, const BoundParams& p, const EncoderConfig& cfg, const InputSequence& in, std::size_t n,
                bool train, EncoderTrace* trace) {
  if (in.ids.size() > cfg.max_len) {
    throw DataError("input of length " + std::to_string(in.ids.size()) + " exceeds encoder max_len " +
                    std::to_string(cfg.max_len));
  }
  Var x = ag::dropout(embed(g, p, cfg, in, n), cfg.dropout, train);
  if (cfg.kind == EncoderKind::Transformer) return transformer_layers(g, p, cfg, in, n, x, train, trace);
  return window_layer(g, p, cfg, in, n, x, train);
}

}  // namespace

ParamStore init_encoder_params(const EncoderConfig& cfg) {
  cfg.validate();
  ParamStore p;
  const std::size_t d = cfg.hidden_dim;
  // Embedding tables use a width-only bound so the token/position balance does
  // not drift with vocabulary size or max_len.
  const double bound = std::sqrt(3.0 / static_cast<double>(d));
  p["encoder.token_embedding"] = uniform(cfg.vocab_size, d, bound, derive_seed(cfg.seed, "encoder.token_embedding"));
  add_norm(p, "encoder.embedding_norm", d);
  if (cfg.kind == EncoderKind::Transformer) {
    p["encoder.position_embedding"] =
        uniform(cfg.max_len, d, bound * cfg.position_scale, derive_seed(cfg.seed, "encoder.position_embedding"));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto pre = layer_prefix(l);
      for (const char* part : {".attention.query", ".attention.key", ".attention.value", ".attention.output"}) {
        add_linear(p, pre + part, d, d, cfg.seed);
      }
      add_norm(p, pre + ".attention_norm", d);
      add_linear(p, pre + ".ffn.in", d, cfg.ff_dim, cfg.seed);
      add_linear(p, pre + ".ffn.out", cfg.ff_dim, d, cfg.seed);
      add_norm(p, pre + ".ffn_norm", d);
    }
  } else {
    p["encoder.window.self.weight"] = xavier(d, d, derive_seed(cfg.seed, "encoder.window.self.weight"));
    p["encoder.window.context.weight"] = xavier(d, d, derive_seed(cfg.seed, "encoder.window.context.weight"));
    p["encoder.window.bias"] = Tensor::zeros({d});
    add_norm(p, "encoder.window_norm", d);
  }
  return p;
}

Var encode(Graph& graph, const BoundParams& params, const EncoderConfig& config, const InputSequence& input,
           bool train_mode, EncoderTrace* trace) {
  return encode_rows(graph, params, config, input, input.ids.size(), train_mode, trace);
}

Var encode_occupied(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                    const InputSequence& input, bool train_mode, EncoderTrace* trace) {
  return encode_rows(graph, params, config, input, input.occupied, train_mode, trace);
}

}  // namespace fsner
