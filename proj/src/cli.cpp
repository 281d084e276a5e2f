#include "fsner/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fsner/config.hpp"
#include "fsner/gradcheck.hpp"

namespace fsner {

namespace {

namespace fs = std::filesystem;

struct Context {
  RunConfig config;
  std::string command;
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;

  fs::path out_dir() const { return config.out; }

  fs::path prepare_out_dir() const {
    std::error_code ec;
    fs::create_directories(out_dir(), ec);
    if (ec) throw DataError("cannot create output directory '" + config.out + "': " + ec.message());
    write_text(out_dir() / "resolved_config.json", config.to_json() + "\n");
    return out_dir();
  }

  void write_text(const fs::path& path, const std::string& text) const {
    std::ofstream f(path);
    if (!f || !(f << text)) throw DataError("cannot write '" + path.string() + "'");
    log->info("wrote {}", path.string());
  }

  TrainConfig train_config() const {
    TrainConfig t = config.train;
    t.seed = config.seed;
    return t;
  }
};

spdlog::level::level_enum level_from_env() {
  const char* v = std::getenv("FSNER_LOG");
  if (!v || !*v) return spdlog::level::info;
  auto level = spdlog::level::from_str(v);
  return level;
}

bool is_episode_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".jsonl" || ext == ".json";
}

// Sentences and phrase words from extra corpora, so that target-domain words
// get their own ids.
void extend_vocab(Vocabulary& vocab, const RunConfig& cfg, const Context& ctx) {
  std::vector<Sentence> extra;
  LabelMap derived;
  for (const auto& path : cfg.vocab_corpora) {
    if (is_episode_file(path)) {
      for (const auto& ep : read_fewnerd_episodes(path)) {
        extra.insert(extra.end(), ep.support.begin(), ep.support.end());
        extra.insert(extra.end(), ep.query.begin(), ep.query.end());
        derived.fill_missing(LabelSet(ep.types, DomainRole::Target));
      }
    } else {
      const auto s = read_conll(path);
      extra.insert(extra.end(), s.begin(), s.end());
    }
  }
  if (!cfg.target_label_map.empty()) {
    for (const auto& [cls, phrase] : load_label_map(cfg.target_label_map).entries()) derived.set(cls, phrase);
  }
  const auto extra_vocab = build_vocab(extra, cfg.min_count, &derived, vocab.lowercase());
  const auto before = vocab.size();
  for (std::size_t i = 4; i < extra_vocab.size(); ++i) {
    vocab.add(extra_vocab.token(static_cast<std::int32_t>(i)));
  }
  if (vocab.size() > before) ctx.log->info("vocabulary extended by {} tokens from extra corpora", vocab.size() - before);
}

int cmd_train(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.require({"train_corpus", "label_map"});
  cfg.validate();
  const auto corpus = read_conll(cfg.train_corpus);
  const auto labels = LabelSet::from_sentences(corpus, DomainRole::Source);
  const auto map = load_label_map(cfg.label_map, labels);
  auto vocab = build_vocab(corpus, cfg.min_count, &map);
  extend_vocab(vocab, cfg, ctx);
  ctx.log->info("training on {} sentences, {} classes, vocabulary {}", corpus.size(), labels.class_count(),
                vocab.size());

  const auto dir = ctx.prepare_out_dir();
  auto result = train_source(corpus, labels, map, std::move(vocab), cfg.model_config(), ctx.train_config());
  for (const auto& s : result.log) ctx.log->debug("step {} loss {:.6f}", s.step, s.loss);
  save_checkpoint(result.checkpoint, dir / "checkpoint.fsner");
  ctx.log->info("wrote {}", (dir / "checkpoint.fsner").string());
  ctx.write_text(dir / "loss_log.tsv", format_loss_log(result.log));
  ctx.out << "trained " << result.log.size() << " steps; final loss "
          << (result.log.empty() ? 0.0 : result.log.back().loss) << "\n";
  return 0;
}

int cmd_finetune(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.require({"checkpoint", "support", "target_label_map"});
  cfg.validate();
  const auto source = load_checkpoint(cfg.checkpoint);
  const auto support = read_conll(cfg.support);
  const auto labels = LabelSet::from_sentences(support, DomainRole::Target);
  const auto map = load_label_map(cfg.target_label_map, labels);

  const auto dir = ctx.prepare_out_dir();
  const auto result = finetune(source, support, labels, map, ctx.train_config());
  save_checkpoint(result.checkpoint, dir / "checkpoint.fsner");
  ctx.log->info("wrote {}", (dir / "checkpoint.fsner").string());
  std::ostringstream log;
  log << "iteration\tloss\n";
  log.precision(10);
  for (std::size_t i = 0; i < result.losses.size(); ++i) log << i << '\t' << result.losses[i] << '\n';
  ctx.write_text(dir / "finetune_log.tsv", log.str());
  ctx.out << "fine-tuned " << result.iterations << " iterations"
          << (result.hit_cap ? " (iteration cap reached)" : " (loss increased)") << "\n";
  return 0;
}

int cmd_predict(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.require({"checkpoint", "support", "input"});
  cfg.validate();
  const auto ckpt = load_checkpoint(cfg.checkpoint);
  const auto support = read_conll(cfg.support);
  const auto input = read_conll(cfg.input);
  const auto dir = ctx.prepare_out_dir();
  const auto bank = build_support_bank(ckpt, support, cfg.inference());
  const auto predicted = predict(ckpt, bank, input, cfg.inference());
  write_conll(predicted, dir / "predictions.conll");
  ctx.log->info("wrote {}", (dir / "predictions.conll").string());
  ctx.out << "tagged " << predicted.size() << " sentences\n";
  return 0;
}

int cmd_evaluate(Context& ctx) {
  auto& cfg = ctx.config;
  EvalReport report;
  if (cfg.protocol == Protocol::Episode) {
    cfg.require({"checkpoint", "episodes"});
    cfg.validate();
    const auto source = load_checkpoint(cfg.checkpoint);
    const auto episodes = read_fewnerd_episodes(cfg.episodes);
    const LabelMap map = cfg.target_label_map.empty() ? LabelMap{} : load_label_map(cfg.target_label_map);
    ctx.prepare_out_dir();
    ctx.log->info("evaluating {} episodes with {} job(s)", episodes.size(), cfg.jobs);
    report = evaluate_episodes(source, episodes, map, ctx.train_config(), cfg.eval_options());
  } else {
    cfg.require({"checkpoint", "target_train", "test_corpus"});
    cfg.validate();
    const auto source = load_checkpoint(cfg.checkpoint);
    const auto train = read_conll(cfg.target_train);
    const auto test = read_conll(cfg.test_corpus);
    const auto labels = LabelSet::from_sentences(train, DomainRole::Target);
    const LabelMap map = cfg.target_label_map.empty() ? LabelMap{} : load_label_map(cfg.target_label_map);
    ctx.prepare_out_dir();
    ctx.log->info("low-resource evaluation: {} runs of {}-way {}-shot", cfg.runs, cfg.n_way, cfg.k_shot);
    report = low_resource_eval(source, train, test, labels, map, cfg.low_resource_spec(), ctx.train_config(),
                               cfg.eval_options());
  }
  ctx.write_text(ctx.out_dir() / "report.txt", report.summary());
  ctx.write_text(ctx.out_dir() / "report.json", report.to_json() + "\n");
  ctx.out << report.summary();
  return 0;
}

int cmd_sample(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.require({"input"});
  cfg.validate();
  const auto corpus = read_conll(cfg.input);
  const auto labels = LabelSet::from_sentences(corpus, DomainRole::Target);
  const auto sample = greedy_sample_support(corpus, labels, cfg.n_way, cfg.k_shot, cfg.seed, cfg.strict_k);
  const auto dir = ctx.prepare_out_dir();
  write_conll(sample.sentences, dir / "support.conll");
  ctx.log->info("wrote {}", (dir / "support.conll").string());
  ctx.out << "sampled " << sample.sentences.size() << " sentences";
  for (const auto& [cls, n] : sample.counts) ctx.out << ' ' << cls << '=' << n;
  ctx.out << (sample.overshoot ? " (some class exceeds the upper bound)" : "") << "\n";
  return 0;
}

int cmd_gradcheck(Context& ctx) {
  ctx.config.validate();
  ctx.prepare_out_dir();
  GradcheckOptions opts;
  opts.seed = ctx.config.seed;
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(opts)) {
    ctx.out << c.name << ": max rel. err " << c.max_rel_error << " over " << c.batches << " batches "
            << (c.passed ? "ok" : "FAILED") << "\n";
    ok = ok && c.passed;
  }
  ctx.out << (ok ? "PASS" : "FAIL") << "\n";
  if (!ok) throw NumericError("gradient check failed (tolerance " + std::to_string(opts.tolerance) + ")");
  return 0;
}

int cmd_dump_embeddings(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.require({"checkpoint", "input"});
  cfg.validate();
  const auto ckpt = load_checkpoint(cfg.checkpoint);
  const auto input = read_conll(cfg.input);
  const auto dir = ctx.prepare_out_dir();
  dump_embeddings(ckpt, input, dir / "embeddings.tsv", cfg.inference());
  ctx.log->info("wrote {}", (dir / "embeddings.tsv").string());
  ctx.out << "dumped embeddings for " << input.size() << " sentences\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot NER with Gaussian contrastive token embeddings"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> jobs;
  app.add_option("--config", config_path, "JSON file of config keys")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config key (key=value); repeatable")->allow_extra_args(false);
  app.add_option("--seed", seed, "Root seed for every random stream");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--jobs", jobs, "Parallel episodes or runs during evaluation");
  app.add_flag_callback("--list-keys", [&] {
    for (const auto& k : RunConfig::keys()) out << k << "\n";
    throw CLI::Success();
  }, "Print every config key and exit");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Train the encoder and projection heads on a source corpus"},
      {"finetune", "Adapt a checkpoint to a target support set"},
      {"predict", "Tag sentences by nearest support token"},
      {"evaluate", "Episode or low-resource evaluation"},
      {"sample", "Draw an N-way K-shot support set"},
      {"gradcheck", "Finite-difference check of every loss"},
      {"dump-embeddings", "Write per-token hidden states as TSV"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("fsner", sink);
  log->set_pattern("[%H:%M:%S] [%l] %v");
  log->set_level(level_from_env());

  const std::string command = app.get_subcommands().front()->get_name();
  Context ctx{RunConfig{}, command, out, log};
  try {
    if (!config_path.empty()) ctx.config.apply_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
      ctx.config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) ctx.config.seed = *seed;
    if (out_dir) ctx.config.out = *out_dir;
    if (jobs) ctx.config.jobs = *jobs;

    if (command == "train") return cmd_train(ctx);
    if (command == "finetune") return cmd_finetune(ctx);
    if (command == "predict") return cmd_predict(ctx);
    if (command == "evaluate") return cmd_evaluate(ctx);
    if (command == "sample") return cmd_sample(ctx);
    if (command == "gradcheck") return cmd_gradcheck(ctx);
    return cmd_dump_embeddings(ctx);
  } catch (const Error& e) {
    log->error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    log->error("unexpected failure: {}", e.what());
    return 1;
  }
}

}  // namespace fsner
