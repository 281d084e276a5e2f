#include "fsner/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fsner/random.hpp"

namespace fsner {

void ModelConfig::validate() const {
  encoder.validate();
  projection.validate();
  if (projection.input_dim != encoder.hidden_dim) {
    throw UsageError("projection.input_dim must equal encoder.hidden_dim");
  }
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model m{config, init_encoder_params(config.encoder)};
  for (auto& [name, t] : init_projection_params(config.projection, derive_seed(config.encoder.seed, "projection"))) {
    m.params.emplace(name, std::move(t));
  }
  return m;
}

// --- optimizer --------------------------------------------------------------

bool decay_excluded(std::string_view name, std::span<const std::string> patterns) {
  return std::any_of(patterns.begin(), patterns.end(),
                     [&](const std::string& p) { return name.find(p) != std::string_view::npos; });
}

void adamw_step(ParamStore& params, const GradStore& grads, OptimizerState& state) {
  const auto& h = state.hyper;
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("adamw: gradient for unknown parameter '" + name + "'");
    if (g.size() != it->second.size()) {
      throw ShapeError("adamw", it->second.shape, "gradient has " + std::to_string(g.size()) + " entries");
    }
    for (double x : g) {
      if (!std::isfinite(x)) throw NumericError("adamw: non-finite gradient for '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (const auto& [name, g] : grads) {
    auto& theta = params.find(name)->second.values;
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(theta.size(), 0.0);
    v.resize(theta.size(), 0.0);
    const double wd = decay_excluded(name, h.decay_exclude) ? 0.0 : h.weight_decay;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps) + h.lr * wd * theta[i];
    }
  }
}

// --- configuration ----------------------------------------------------------

std::string_view to_string(ShotMode mode) noexcept { return mode == ShotMode::OneShot ? "1-shot" : "k-shot"; }

ShotMode shot_mode_from_string(std::string_view s) {
  if (s == "1-shot" || s == "one-shot" || s == "1") return ShotMode::OneShot;
  if (s == "k-shot" || s == "k") return ShotMode::KShot;
  throw UsageError("shot_mode: expected '1-shot' or 'k-shot', got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw UsageError("lr must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw UsageError("beta1 must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw UsageError("beta2 must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw UsageError("eps must be positive");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (epochs == 0) throw UsageError("epochs must be positive");
  if (max_len < 4) throw UsageError("max_len must be at least 4");
  if (max_finetune_iters == 0) throw UsageError("max_finetune_iters must be positive");
  for (double a : alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw UsageError("alpha_grid values must be in [0, 1]");
  }
  loss.validate();
}

LossConfig finetune_loss_config(const TrainConfig& config) {
  if (config.shot_mode == ShotMode::KShot) return config.loss;
  LossConfig c = config.loss;
  c.use_context_context = false;
  c.use_context_label = true;
  c.alpha = 0.0;
  c.metric = Metric::SquaredEuclidean;
  return c;
}

std::string format_loss_log(std::span<const StepLog> log) {
  std::ostringstream out;
  out.precision(10);
  out << "step\tepoch\ttokens\tloss\tcontext_context\tcontext_label\n";
  for (const auto& s : log) {
    out << s.step << '\t' << s.epoch << '\t' << s.tokens << '\t' << s.loss << '\t';
    if (s.context_context) {
      out << *s.context_context;
    } else {
      out << '-';
    }
    out << '\t';
    if (s.context_label) {
      out << *s.context_label;
    } else {
      out << '-';
    }
    out << '\n';
  }
  return out.str();
}

// --- batches ----------------------------------------------------------------

BatchBuild build_batch(Graph& graph, const BoundParams& params, const ModelConfig& model,
                       std::span<const InputSequence> inputs, bool train_mode, bool hidden_space, double o_keep,
                       std::uint64_t subsample_seed) {
  BatchBuild out;
  std::vector<Var> ctx_rows, rep_rows;
  std::uint64_t counter = 0;
  for (const auto& input : inputs) {
    std::vector<std::size_t> keep;
    std::vector<std::string> tags;
    for (std::size_t i = 0; i < input.context_positions.size(); ++i) {
      const Tag& tag = input.gold_tags[i];
      const bool drop = !tag.is_entity() && o_keep < 1.0 && counter_uniform(subsample_seed, counter) >= o_keep;
      ++counter;
      if (drop) continue;
      keep.push_back(input.context_positions[i]);
      tags.emplace_back(tag.class_name());
    }
    if (keep.empty()) continue;
    Var h = encode_occupied(graph, params, model.encoder, input, train_mode);
    ctx_rows.push_back(ag::gather_rows(h, std::move(keep)));
    rep_rows.push_back(ag::gather_rows(h, input.label_rep_index));
    for (auto& t : tags) {
      out.batch.tags.push_back(std::move(t));
      out.batch.sentence_of.push_back(out.sentences);
    }
    out.batch.rep_classes.push_back(input.classes);
    ++out.sentences;
  }
  if (out.sentences == 0) return out;

  Var tokens = ag::concat(ctx_rows, 0);
  if (hidden_space) {
    out.batch.tokens = {tokens, Var{}};
    for (const auto& r : rep_rows) out.batch.reps.push_back({r, Var{}});
    return out;
  }

  // One projection call over tokens and representatives together.
  std::vector<Var> all{tokens};
  all.insert(all.end(), rep_rows.begin(), rep_rows.end());
  GaussianRows projected = project_rows(params, ag::concat(all, 0));
  const std::size_t n = tokens.rows();
  auto take = [&](std::size_t start, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    return GaussianRows{ag::gather_rows(projected.mu, idx), ag::gather_rows(projected.sigma2, idx)};
  };
  out.batch.tokens = take(0, n);
  std::size_t offset = n;
  for (const auto& r : rep_rows) {
    out.batch.reps.push_back(take(offset, r.rows()));
    offset += r.rows();
  }
  return out;
}

namespace {

GradStore collect_grads(const Graph& graph, const BoundParams& bound) {
  GradStore grads;
  for (const auto& [name, v] : bound) {
    auto g = graph.grad(v);
    grads.emplace(name, std::vector<double>(g.begin(), g.end()));
  }
  return grads;
}

std::vector<InputSequence> assemble_all(std::span<const Sentence> sentences, const LabelPrompt& prompt,
                                        const Vocabulary& vocab, std::size_t max_len) {
  std::vector<InputSequence> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    try {
      out.push_back(assemble_input(sentences[i], prompt, vocab, max_len));
    } catch (const DataError& e) {
      throw DataError("sentence " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

void require_finite(double loss, std::string_view where, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(where) + ": non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace

TrainResult train_source(std::span<const Sentence> corpus, const LabelSet& labels, const LabelMap& label_map,
                         Vocabulary vocab, ModelConfig model_config, const TrainConfig& config) {
  config.validate();
  if (corpus.empty()) throw DataError("train_source: empty training corpus");
  label_map.require_covers(labels);

  model_config.encoder.vocab_size = vocab.size();
  model_config.encoder.max_len = config.max_len;
  model_config.encoder.seed = derive_seed(config.seed, "init");
  model_config.projection.input_dim = model_config.encoder.hidden_dim;

  TrainResult result{{Model::init(model_config), std::move(vocab), labels, label_map}, {}};
  Checkpoint& ckpt = result.checkpoint;
  const auto inputs = assemble_all(corpus, ckpt.prompt(), ckpt.vocab, config.max_len);

  OptimizerState opt;
  opt.hyper = config.optimizer;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(config.seed, "shuffle", epoch)).shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<InputSequence> batch_inputs;
      for (std::size_t i = start; i < end; ++i) batch_inputs.push_back(inputs[order[i]]);

      Graph graph(derive_seed(config.seed, "dropout", step));
      auto bound = bind_params(graph, ckpt.model.params, true);
      auto built = build_batch(graph, bound, ckpt.model.config, batch_inputs, true, false, config.loss.o_subsample,
                               derive_seed(config.seed, "o-subsample", step));
      if (built.sentences == 0) continue;

      Objective obj = mixed_loss(built.batch, config.loss);
      const double loss = obj.total.item();
      require_finite(loss, "train_source", step);
      graph.backward(obj.total);
      adamw_step(ckpt.model.params, collect_grads(graph, bound), opt);

      result.log.push_back({step, epoch, loss, obj.context_context, obj.context_label, built.batch.tags.size(),
                            obj.no_anchors});
      ++step;
    }
  }
  return result;
}

FinetuneResult finetune(const Checkpoint& source, std::span<const Sentence> support, const LabelSet& labels,
                        const LabelMap& label_map, const TrainConfig& config) {
  config.validate();
  if (support.empty()) throw DataError("finetune: empty support set");
  label_map.require_covers(labels);

  FinetuneResult result{source, {}, 0, false, {}};
  Checkpoint& ckpt = result.checkpoint;
  ckpt.labels = labels;
  ckpt.label_map = label_map;

  const LossConfig loss_cfg = finetune_loss_config(config);
  const bool hidden_space = config.shot_mode == ShotMode::OneShot && config.one_shot_hidden_space;
  const auto inputs = assemble_all(support, ckpt.prompt(), ckpt.vocab, ckpt.model.config.encoder.max_len);

  OptimizerState opt;
  opt.hyper = config.optimizer;
  ParamStore best;
  double best_loss = std::numeric_limits<double>::infinity();

  double prev = std::numeric_limits<double>::infinity();
  double current = prev - 1.0;
  while (true) {
    prev = current;
    Graph graph(derive_seed(config.seed, "finetune-dropout", result.iterations));
    auto bound = bind_params(graph, ckpt.model.params, true);
    auto built = build_batch(graph, bound, ckpt.model.config, inputs, config.finetune_dropout, hidden_space, 1.0, 0);
    if (built.sentences == 0) throw DataError("finetune: support set has no context tokens after truncation");

    Objective obj = mixed_loss(built.batch, loss_cfg, &result.counters);
    current = obj.total.item();
    require_finite(current, "finetune", result.iterations);
    result.losses.push_back(current);
    if (config.keep_best && current < best_loss) {
      best_loss = current;
      best = ckpt.model.params;
    }

    graph.backward(obj.total);
    adamw_step(ckpt.model.params, collect_grads(graph, bound), opt);
    ++result.iterations;

    if (current > prev) break;
    if (result.iterations >= config.max_finetune_iters) {
      result.hit_cap = true;
      break;
    }
  }
  if (config.keep_best && !best.empty()) ckpt.model.params = std::move(best);
  return result;
}

}  // namespace fsner
