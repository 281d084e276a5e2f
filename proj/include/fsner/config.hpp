#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fsner/encoder.hpp"
#include "fsner/eval.hpp"
#include "fsner/gaussian.hpp"
#include "fsner/training.hpp"

namespace fsner {

enum class Protocol { Episode, LowResource };
std::string_view to_string(Protocol p) noexcept;
Protocol protocol_from_string(std::string_view s);

// Every setting of a run under one flat namespace of keys, so a JSON config
// file and `--set key=value` overrides address the same fields.
struct RunConfig {
  // paths
  std::string train_corpus;
  std::string label_map;
  std::string target_label_map;
  std::string checkpoint;
  std::string support;
  std::string input;
  std::string episodes;
  std::string target_train;
  std::string test_corpus;
  std::string out = "out";
  std::vector<std::string> vocab_corpora;
  std::size_t min_count = 1;

  // protocol
  Protocol protocol = Protocol::Episode;
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t runs = 5;
  std::vector<std::uint64_t> seeds;
  bool strict_k = false;
  bool exclude_failed_runs = false;
  ScoringUnit scoring = ScoringUnit::Span;
  bool nn_use_projection = false;

  std::uint64_t seed = 42;
  std::size_t jobs = 1;

  EncoderConfig encoder;
  ProjectionConfig projection;
  TrainConfig train;

  // Applies one key. `value` is JSON; for string-typed keys a bare word is
  // accepted too. UsageError names unknown keys and bad values.
  void set(std::string_view key, std::string_view value);
  void apply_json(std::string_view text);
  void apply_file(const std::filesystem::path& path);

  // Every key with its current value, pretty-printed JSON.
  std::string to_json() const;
  static std::vector<std::string> keys();

  ModelConfig model_config() const;
  InferenceOptions inference() const { return {nn_use_projection}; }
  EvalOptions eval_options() const;
  LowResourceSpec low_resource_spec() const;

  // Cross-field checks independent of the subcommand.
  void validate() const;
  // UsageError "missing required field '<key>'" for the first empty path.
  void require(std::initializer_list<std::string_view> keys) const;
};

}  // namespace fsner
