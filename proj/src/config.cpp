#include "fsner/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace fsner {

using nlohmann::json;

std::string_view to_string(Protocol p) noexcept { return p == Protocol::Episode ? "episode" : "low-resource"; }

Protocol protocol_from_string(std::string_view s) {
  if (s == "episode") return Protocol::Episode;
  if (s == "low-resource") return Protocol::LowResource;
  throw UsageError("protocol: expected 'episode' or 'low-resource', got '" + std::string(s) + "'");
}

namespace {

struct Field {
  std::string key;
  bool textual = false;  // bare words accepted on the command line
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

[[noreturn]] void bad_value(std::string_view key, const json& v, std::string_view expected) {
  throw UsageError("invalid value for '" + std::string(key) + "': expected " + std::string(expected) + ", got " +
                   v.dump());
}

template <typename T>
T convert(std::string_view key, const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad_value(key, v, "true or false");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad_value(key, v, "a string");
    return v.get<std::string>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) bad_value(key, v, "a number");
    return v.get<double>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      bad_value(key, v, "a non-negative integer");
    }
    return v.get<T>();
  } else {
    if (!v.is_array()) bad_value(key, v, "a list");
    T out;
    for (const auto& e : v) out.push_back(convert<typename T::value_type>(key, e));
    return out;
  }
}

// `access` is a generic lambda returning a reference into the config.
template <typename T, typename Access>
Field plain(std::string key, Access access) {
  Field f;
  f.key = key;
  f.textual = std::is_same_v<T, std::string>;
  f.set = [key, access](RunConfig& c, const json& v) { access(c) = convert<T>(key, v); };
  f.get = [access](const RunConfig& c) { return json(access(c)); };
  return f;
}

template <typename Access, typename Parse, typename Print>
Field choice(std::string key, Access access, Parse parse, Print print) {
  Field f;
  f.key = key;
  f.textual = true;
  f.set = [key, access, parse](RunConfig& c, const json& v) {
    if (!v.is_string()) bad_value(key, v, "a string");
    access(c) = parse(v.get<std::string>());
  };
  f.get = [access, print](const RunConfig& c) { return json(std::string(print(access(c)))); };
  return f;
}

#define FSNER_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    // paths
    f.push_back(plain<std::string>("train_corpus", FSNER_REF(train_corpus)));
    f.push_back(plain<std::string>("label_map", FSNER_REF(label_map)));
    f.push_back(plain<std::string>("target_label_map", FSNER_REF(target_label_map)));
    f.push_back(plain<std::string>("checkpoint", FSNER_REF(checkpoint)));
    f.push_back(plain<std::string>("support", FSNER_REF(support)));
    f.push_back(plain<std::string>("input", FSNER_REF(input)));
    f.push_back(plain<std::string>("episodes", FSNER_REF(episodes)));
    f.push_back(plain<std::string>("target_train", FSNER_REF(target_train)));
    f.push_back(plain<std::string>("test_corpus", FSNER_REF(test_corpus)));
    f.push_back(plain<std::string>("out", FSNER_REF(out)));
    f.push_back(plain<std::vector<std::string>>("vocab_corpora", FSNER_REF(vocab_corpora)));
    f.push_back(plain<std::size_t>("min_count", FSNER_REF(min_count)));
    // protocol
    f.push_back(choice("protocol", FSNER_REF(protocol), protocol_from_string,
                       [](Protocol p) { return to_string(p); }));
    f.push_back(plain<std::size_t>("n_way", FSNER_REF(n_way)));
    f.push_back(plain<std::size_t>("k_shot", FSNER_REF(k_shot)));
    f.push_back(plain<std::size_t>("runs", FSNER_REF(runs)));
    f.push_back(plain<std::vector<std::uint64_t>>("seeds", FSNER_REF(seeds)));
    f.push_back(plain<bool>("strict_k", FSNER_REF(strict_k)));
    f.push_back(plain<bool>("exclude_failed_runs", FSNER_REF(exclude_failed_runs)));
    f.push_back(choice("scoring", FSNER_REF(scoring), scoring_unit_from_string,
                       [](ScoringUnit u) { return to_string(u); }));
    f.push_back(choice(
        "nn_space", FSNER_REF(nn_use_projection),
        [](const std::string& s) {
          if (s == "hidden") return false;
          if (s == "mu") return true;
          throw UsageError("nn_space: expected 'hidden' or 'mu', got '" + s + "'");
        },
        [](bool proj) { return proj ? "mu" : "hidden"; }));
    f.push_back(plain<std::uint64_t>("seed", FSNER_REF(seed)));
    f.push_back(plain<std::size_t>("jobs", FSNER_REF(jobs)));
    // encoder and projection
    f.push_back(choice("encoder", FSNER_REF(encoder.kind), encoder_kind_from_string,
                       [](EncoderKind k) { return to_string(k); }));
    f.push_back(plain<std::size_t>("hidden_dim", FSNER_REF(encoder.hidden_dim)));
    f.push_back(plain<std::size_t>("layers", FSNER_REF(encoder.layers)));
    f.push_back(plain<std::size_t>("heads", FSNER_REF(encoder.heads)));
    f.push_back(plain<std::size_t>("ff_dim", FSNER_REF(encoder.ff_dim)));
    f.push_back(plain<double>("dropout", FSNER_REF(encoder.dropout)));
    f.push_back(plain<std::size_t>("window", FSNER_REF(encoder.window)));
    f.push_back(plain<double>("position_scale", FSNER_REF(encoder.position_scale)));
    f.push_back(plain<std::size_t>("projection_hidden_dim", FSNER_REF(projection.hidden_dim)));
    f.push_back(plain<std::size_t>("embedding_dim", FSNER_REF(projection.output_dim)));
    // training
    f.push_back(plain<double>("lr", FSNER_REF(train.optimizer.lr)));
    f.push_back(plain<double>("weight_decay", FSNER_REF(train.optimizer.weight_decay)));
    f.push_back(plain<double>("beta1", FSNER_REF(train.optimizer.beta1)));
    f.push_back(plain<double>("beta2", FSNER_REF(train.optimizer.beta2)));
    f.push_back(plain<double>("adam_eps", FSNER_REF(train.optimizer.eps)));
    f.push_back(plain<std::vector<std::string>>("decay_exclude", FSNER_REF(train.optimizer.decay_exclude)));
    f.push_back(plain<std::size_t>("batch_size", FSNER_REF(train.batch_size)));
    f.push_back(plain<std::size_t>("epochs", FSNER_REF(train.epochs)));
    f.push_back(plain<std::size_t>("max_len", FSNER_REF(train.max_len)));
    f.push_back(plain<std::vector<double>>("alpha_grid", FSNER_REF(train.alpha_grid)));
    f.push_back(plain<double>("alpha", FSNER_REF(train.loss.alpha)));
    f.push_back(plain<double>("tau", FSNER_REF(train.loss.tau)));
    f.push_back(choice("loss_variant", FSNER_REF(train.loss.variant), loss_variant_from_string,
                       [](LossVariant v) { return to_string(v); }));
    f.push_back(choice("metric", FSNER_REF(train.loss.metric), metric_from_string,
                       [](Metric m) { return to_string(m); }));
    f.push_back(plain<bool>("use_context_context", FSNER_REF(train.loss.use_context_context)));
    f.push_back(plain<bool>("use_context_label", FSNER_REF(train.loss.use_context_label)));
    f.push_back(plain<double>("o_subsample", FSNER_REF(train.loss.o_subsample)));
    f.push_back(choice("shot_mode", FSNER_REF(train.shot_mode), shot_mode_from_string,
                       [](ShotMode m) { return to_string(m); }));
    f.push_back(plain<std::size_t>("max_finetune_iters", FSNER_REF(train.max_finetune_iters)));
    f.push_back(plain<bool>("keep_best", FSNER_REF(train.keep_best)));
    f.push_back(choice(
        "one_shot_space", FSNER_REF(train.one_shot_hidden_space),
        [](const std::string& s) {
          if (s == "mu") return false;
          if (s == "hidden") return true;
          throw UsageError("one_shot_space: expected 'mu' or 'hidden', got '" + s + "'");
        },
        [](bool hidden) { return hidden ? "hidden" : "mu"; }));
    f.push_back(plain<bool>("finetune_dropout", FSNER_REF(train.finetune_dropout)));
    return f;
  }();
  return all;
}

#undef FSNER_REF

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const Field& f = field(key);
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = std::string(value);
  }
  if (f.textual && !v.is_string()) v = std::string(value);
  f.set(*this, v);
}

void RunConfig::apply_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object of key/value pairs");
  for (const auto& [key, value] : j.items()) field(key).set(*this, value);
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  apply_json(buf.str());
}

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j.dump(2);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m{encoder, projection};
  m.encoder.max_len = train.max_len;
  m.projection.input_dim = encoder.hidden_dim;
  return m;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.inference = inference();
  o.unit = scoring;
  o.jobs = jobs;
  o.exclude_failed_runs = exclude_failed_runs;
  return o;
}

LowResourceSpec RunConfig::low_resource_spec() const { return {n_way, k_shot, runs, seeds, strict_k}; }

void RunConfig::validate() const {
  ModelConfig m = model_config();
  m.encoder.vocab_size = std::max<std::size_t>(m.encoder.vocab_size, 4);
  m.validate();
  TrainConfig t = train;
  t.seed = seed;
  t.validate();
  if (n_way == 0) throw UsageError("n_way must be positive");
  if (k_shot == 0) throw UsageError("k_shot must be positive");
  if (runs == 0) throw UsageError("runs must be positive");
  if (!seeds.empty() && seeds.size() != runs) throw UsageError("seeds must list exactly `runs` values");
  if (jobs == 0) throw UsageError("jobs must be positive");
  if (min_count == 0) throw UsageError("min_count must be positive");
}

void RunConfig::require(std::initializer_list<std::string_view> required) const {
  for (auto key : required) {
    const json v = field(key).get(*this);
    if (v.is_string() && v.get<std::string>().empty()) {
      throw UsageError("missing required field '" + std::string(key) + "'");
    }
  }
}

}  // namespace fsner
