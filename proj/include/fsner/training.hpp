#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsner/data.hpp"
#include "fsner/encoder.hpp"
#include "fsner/gaussian.hpp"
#include "fsner/losses.hpp"
#include "fsner/prompt.hpp"

namespace fsner {

struct ModelConfig {
  EncoderConfig encoder;
  ProjectionConfig projection;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Model {
  ModelConfig config;
  ParamStore params;  // encoder.* and projection.*

  static Model init(const ModelConfig& config);
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  Model model;
  Vocabulary vocab;
  LabelSet labels;     // classes the current prompt is built from
  LabelMap label_map;

  LabelPrompt prompt() const { return build_label_prompt(labels, label_map); }
};

// Binary layout (little-endian):
//   8 bytes magic "FSNERCKP", u32 format version,
//   u64 metadata length + metadata JSON (configs, vocabulary, labels, label map),
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//   u32 rank, u64 dims[rank], f64 values[product(dims)].
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Parameters whose name contains any of these skip weight decay.
  std::vector<std::string> decay_exclude = {"bias", "norm"};

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimizerState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>, std::less<>> m;
  std::map<std::string, std::vector<double>, std::less<>> v;
};

using GradStore = std::map<std::string, std::vector<double>, std::less<>>;

bool decay_excluded(std::string_view name, std::span<const std::string> patterns);

// Decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
// with the step counter incremented before bias correction. Parameters
// without a gradient entry are left untouched. NumericError on non-finite
// gradients.
void adamw_step(ParamStore& params, const GradStore& grads, OptimizerState& state);

// --- training ---------------------------------------------------------------

enum class ShotMode { OneShot, KShot };
std::string_view to_string(ShotMode mode) noexcept;
ShotMode shot_mode_from_string(std::string_view s);

struct TrainConfig {
  AdamWConfig optimizer;  // lr 5e-5, weight decay 0.01
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t max_len = kDefaultMaxLen;
  std::vector<double> alpha_grid = {0.8, 0.5, 0.3};
  LossConfig loss;
  std::uint64_t seed = 42;
  ShotMode shot_mode = ShotMode::KShot;
  std::size_t max_finetune_iters = 200;
  bool keep_best = false;
  // 1-shot fine-tuning distance on raw hidden states instead of mu.
  bool one_shot_hidden_space = false;
  // Dropout active while fine-tuning.
  bool finetune_dropout = true;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> context_context;
  std::optional<double> context_label;
  std::size_t tokens = 0;
  bool no_anchors = false;
};

std::string format_loss_log(std::span<const StepLog> log);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
};

// Shuffled batches of batch_size sentences for `epochs` passes; each batch is
// assembled with the label prompt, encoded, projected and scored with the
// mixed loss, followed by one AdamW step. NumericError on a non-finite loss.
TrainResult train_source(std::span<const Sentence> corpus, const LabelSet& labels, const LabelMap& label_map,
                         Vocabulary vocab, ModelConfig model_config, const TrainConfig& config);

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per iteration, in order
  std::size_t iterations = 0;
  bool hit_cap = false;
  LossCounters counters;
};

// Early-stopped fine-tuning on the whole support set as one batch: compute
// the loss, take a gradient step, and stop once the loss exceeds the previous
// one (or the iteration cap is hit). The returned parameters are those after
// the final step unless keep_best is set, in which case they are the
// parameters that produced the lowest recorded loss. 1-shot mode optimizes
// the context-label loss alone with squared Euclidean distance.
FinetuneResult finetune(const Checkpoint& source, std::span<const Sentence> support, const LabelSet& labels,
                        const LabelMap& label_map, const TrainConfig& config);

// Loss configuration actually used by finetune() for the given mode.
LossConfig finetune_loss_config(const TrainConfig& config);

// Encodes, projects and assembles the batch used by both training stages.
// Sentences with no context tokens left after truncation are dropped.
struct BatchBuild {
  BatchGraph batch;
  std::size_t sentences = 0;
};
BatchBuild build_batch(Graph& graph, const BoundParams& params, const ModelConfig& model,
                       std::span<const InputSequence> inputs, bool train_mode, bool hidden_space,
                       double o_keep, std::uint64_t subsample_seed);

}  // namespace fsner
