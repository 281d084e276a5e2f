#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fsner/prompt.hpp"
#include "fsner/tensor.hpp"

namespace fsner {

// Name-ordered parameter container shared by the encoder, the projection
// heads, the optimizer and checkpoints.
using ParamStore = std::map<std::string, Tensor, std::less<>>;
using BoundParams = std::map<std::string, Var, std::less<>>;

// Copies every parameter into the graph as a leaf.
BoundParams bind_params(Graph& graph, const ParamStore& params, bool trainable);
const Var& param(const BoundParams& bound, std::string_view name);

enum class EncoderKind {
  Transformer,
  // Embedding plus averaged neighbor window; a cheap stand-in for ablations.
  Window,
};

std::string_view to_string(EncoderKind kind) noexcept;
EncoderKind encoder_kind_from_string(std::string_view s);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Transformer;
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 256;
  double dropout = 0.1;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t window = 2;
  // Initial position-embedding range relative to the token-embedding range.
  double position_scale = 0.1;
  std::uint64_t seed = 0;

  // UsageError naming the offending field.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

ParamStore init_encoder_params(const EncoderConfig& config);

// Captured intermediate values, for inspection in tests.
struct EncoderTrace {
  std::vector<Var> attention;  // one [n, n] probability matrix per layer and head
};

// Hidden states for every position, shape [max_len, hidden_dim]. Padding
// positions are masked out as attention keys; dropout only in train_mode.
Var encode(Graph& graph, const BoundParams& params, const EncoderConfig& config, const InputSequence& input,
           bool train_mode, EncoderTrace* trace = nullptr);

// Same values for the occupied prefix only, shape [occupied, hidden_dim].
// Rows match encode() bit for bit.
Var encode_occupied(Graph& graph, const BoundParams& params, const EncoderConfig& config,
                    const InputSequence& input, bool train_mode, EncoderTrace* trace = nullptr);

}  // namespace fsner
