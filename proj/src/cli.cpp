#include "ftrack/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ftrack/config.hpp"
#include "ftrack/error.hpp"
#include "ftrack/synth.hpp"
#include "ftrack/training.hpp"

#ifndef FTRACK_GIT_REVISION
#define FTRACK_GIT_REVISION "unknown"
#endif

namespace ftrack {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string log_level;

  // shared
  std::string corpus;
  std::optional<std::string> config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::string> folds_file;
  std::vector<std::size_t> fold_indices;
  std::optional<std::size_t> jobs;

  // stats
  std::string format = "table";

  // eval
  std::string run_dir;
  bool no_baseline = false;

  // predict
  std::optional<std::string> checkpoint;
  std::optional<std::string> dictionaries;
  bool baseline = false;

  // lesion
  std::vector<std::string> remove;

  // synth
  std::optional<std::string> spec;
  std::uint64_t seed = 1;
  std::optional<std::size_t> dialogues;
  bool dump_spec = false;

  // config
  bool dump_defaults = false;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open '{}'", p.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", p.string()));
  out << text;
}

void write_json(const fs::path& p, const Json& j) { write_file(p, j.dump(2) + "\n"); }

Json read_json(const fs::path& p) {
  const std::string text = read_file(p);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw LoadError(fmt::format("'{}' is not valid JSON: {}", p.string(), e.what()));
  }
}

Corpus load_nonempty(const std::string& path) {
  Corpus c = load_corpus(path);
  if (c.empty()) throw LoadError(fmt::format("corpus '{}' holds no dialogues", path));
  return c;
}

Json corpus_info(const std::string& path, const Corpus& c) {
  return Json{{"path", path}, {"hash", fnv1a_hex(read_file(path))}, {"dialogues", c.size()}};
}

Json manifest(std::string_view command, const ExperimentConfig& cfg) {
  Json m;
  m["tool"] = "ftrack";
  m["command"] = command;
  m["git_revision"] = git_revision();
  m["config_hash"] = cfg.hash();
  m["seed"] = Json{{"model", cfg.model.seed}, {"train", cfg.train.seed}};
  return m;
}

std::string fold_dir_name(std::size_t index) { return fmt::format("fold-{:02d}", index); }

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig cfg = load_config(o.config ? std::optional<fs::path>(*o.config) : std::nullopt, o.overrides);
  if (o.jobs) {
    cfg.train.jobs = *o.jobs;
    cfg.train.validate();
  }
  return cfg;
}

std::vector<FoldSpec> experiment_folds(const Options& o, const Corpus& corpus, const ExperimentConfig& cfg) {
  std::vector<FoldSpec> folds =
      o.folds_file ? load_folds(*o.folds_file, corpus, cfg.train.validation_fraction, cfg.train.seed)
                   : make_folds(corpus, cfg.train.folds, cfg.train.validation_fraction, cfg.train.seed);
  if (o.fold_indices.empty()) return folds;
  std::vector<FoldSpec> picked;
  for (std::size_t i : o.fold_indices) {
    if (i >= folds.size()) throw ConfigError(fmt::format("fold {} does not exist (have {})", i, folds.size()));
    picked.push_back(folds[i]);
  }
  return picked;
}

// ---------------------------------------------------------------------------

int cmd_stats(const Options& o, std::ostream& out) {
  const Corpus c = load_nonempty(o.corpus);
  const StatsReport s = corpus_stats(c);
  if (o.format == "json") {
    out << to_json(s).dump(2) << "\n";
  } else {
    out << format_table(s);
  }
  if (!o.out.empty()) write_json(o.out, to_json(s));
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const Corpus corpus = load_nonempty(o.corpus);
  const ExperimentConfig cfg = experiment_config(o);
  const auto folds = experiment_folds(o, corpus, cfg);
  const fs::path run(o.out);
  fs::create_directories(run);
  write_json(run / "config.json", cfg.to_json());
  Json folds_j = Json::array();
  for (const auto& f : folds) folds_j.push_back(f.to_json());
  write_json(run / "folds.json", folds_j);

  std::vector<std::string> dict_hashes(folds.size());
  std::vector<std::string> lines(folds.size());
  parallel_for(folds.size(), cfg.train.jobs, [&](std::size_t i) {
    const FoldSpec& f = folds[i];
    spdlog::info("training fold {} ({} train, {} validation, {} test dialogues)", f.index, f.train.size(),
                 f.validation.size(), f.test.size());
    TrainResult r = train_fold(corpus, f, cfg.model, cfg.train, {}, [](std::size_t fold, const EpochRecord& e) {
      spdlog::info("fold {} epoch {}: train loss {:.4f}, validation loss {:.4f}, slot {:.2f}%, act {:.2f}%", fold,
                   e.epoch, e.train_loss, e.validation_loss, e.validation_slot_accuracy, e.validation_act_accuracy);
    });
    const fs::path dir = run / fold_dir_name(f.index);
    fs::create_directories(dir);
    dict_hashes[i] = r.dictionaries.hash();
    r.dictionaries.save(dir / "dictionaries.json");
    r.model.save(dir / "checkpoint.json", dict_hashes[i]);
    write_json(dir / "history.json", r.history_json());
    lines[i] = fmt::format("fold {}: best epoch {} of {}{}\n", f.index, r.best_epoch, r.history.size(),
                           r.early_stopped ? " (early stop)" : "");
  });
  for (const auto& l : lines) out << l;

  Json m = manifest("train", cfg);
  m["corpus"] = corpus_info(o.corpus, corpus);
  Json fm = Json::array();
  for (std::size_t i = 0; i < folds.size(); ++i) {
    fm.push_back(Json{{"index", folds[i].index}, {"dir", fold_dir_name(folds[i].index)}, {"dictionary_hash", dict_hashes[i]}});
  }
  m["folds"] = std::move(fm);
  write_json(run / "manifest.json", m);
  out << fmt::format("wrote {} checkpoint(s) to {}\n", folds.size(), run.string());
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Corpus corpus = load_nonempty(o.corpus);
  const fs::path run(o.run_dir);
  const ExperimentConfig cfg = ExperimentConfig::from_json(read_json(run / "config.json"));
  const Json folds_j = read_json(run / "folds.json");
  if (!folds_j.is_array() || folds_j.empty()) throw LoadError(fmt::format("'{}' lists no folds", (run / "folds.json").string()));

  std::vector<FoldEval> model_evals, baseline_evals;
  Json fm = Json::array();
  for (const auto& fj : folds_j) {
    const FoldSpec f = FoldSpec::from_json(fj);
    const fs::path dir = run / fold_dir_name(f.index);
    const Dictionaries dict = Dictionaries::load(dir / "dictionaries.json");
    FrameTracker model = FrameTracker::load(dir / "checkpoint.json", dict);
    model_evals.push_back(evaluate_model(model, dict, corpus, f));
    if (!o.no_baseline) baseline_evals.push_back(evaluate_baseline(corpus, f, cfg.baseline, cfg.model.encoding));
    fm.push_back(Json{{"index", f.index}, {"dictionary_hash", dict.hash()}});
    spdlog::info("fold {}: model slot {:.2f}%, act {:.2f}%", f.index, model_evals.back().slot.accuracy(),
                 model_evals.back().act.accuracy());
  }

  const fs::path dest = o.out.empty() ? run / "eval" : fs::path(o.out);
  const MetricsReport mr = summarize("model", model_evals);
  write_json(dest / "metrics_model.json", mr.to_json());
  write_file(dest / "metrics_model.csv", mr.to_csv());
  std::string text = format_report(mr);
  if (!o.no_baseline) {
    const MetricsReport br = summarize("baseline", baseline_evals);
    write_json(dest / "metrics_baseline.json", br.to_json());
    write_file(dest / "metrics_baseline.csv", br.to_csv());
    text += format_report(br);
  }
  write_file(dest / "report.txt", text);
  Json m = manifest("eval", cfg);
  m["corpus"] = corpus_info(o.corpus, corpus);
  m["run_dir"] = run.string();
  m["folds"] = std::move(fm);
  write_json(dest / "manifest.json", m);
  out << text;
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const Corpus corpus = load_nonempty(o.corpus);
  Json records = Json::array();
  if (o.baseline) {
    const ExperimentConfig cfg = experiment_config(o);
    const Dictionaries none;
    for (const auto& d : corpus) {
      for (const auto& t : d.turns) {
        if (!t.is_user()) continue;
        const EncodedTurn et = encode_turn(d, t.index, none, cfg.model.encoding);
        records.push_back(prediction_to_json(et, baseline_predict(d, t.index, cfg.baseline)));
      }
    }
  } else {
    if (!o.checkpoint || !o.dictionaries) {
      throw ConfigError("predict needs --checkpoint and --dictionaries (or --baseline)");
    }
    const Dictionaries dict = Dictionaries::load(*o.dictionaries);
    FrameTracker model = FrameTracker::load(*o.checkpoint, dict);
    for (const auto& d : corpus) {
      for (const auto& t : d.turns) {
        if (!t.is_user()) continue;
        const EncodedTurn et = encode_turn(d, t.index, dict, model.config().encoding);
        records.push_back(prediction_to_json(et, model.predict(et)));
      }
    }
  }
  if (o.out.empty()) {
    out << records.dump(2) << "\n";
  } else {
    write_json(o.out, records);
    out << fmt::format("wrote {} prediction record(s) to {}\n", records.size(), o.out);
  }
  return kExitOk;
}

int cmd_lesion(const Options& o, std::ostream& out) {
  const Corpus corpus = load_nonempty(o.corpus);
  const ExperimentConfig cfg = experiment_config(o);
  std::vector<Input> inputs;
  for (const auto& name : o.remove) {
    const auto in = parse_input(name);
    if (!in) throw ConfigError(fmt::format("unknown lesion input '{}'", name));
    inputs.push_back(*in);
  }
  if (inputs.empty()) inputs.assign(kAllInputs.begin(), kAllInputs.end());
  const auto folds = experiment_folds(o, corpus, cfg);
  const LesionTable t = lesion_study(corpus, folds, cfg.model, cfg.train, inputs);
  const fs::path dest(o.out);
  write_json(dest / "config.json", cfg.to_json());
  write_json(dest / "lesion.json", t.to_json());
  write_file(dest / "lesion.csv", t.to_csv());
  Json m = manifest("lesion", cfg);
  m["corpus"] = corpus_info(o.corpus, corpus);
  Json idx = Json::array();
  for (const auto& f : folds) idx.push_back(f.index);
  m["folds"] = std::move(idx);
  write_json(dest / "manifest.json", m);
  out << t.format();
  return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  SynthSpec spec = o.spec ? SynthSpec::load(*o.spec) : SynthSpec{};
  if (o.dialogues) {
    spec.dialogues = *o.dialogues;
    spec.validate();
  }
  if (o.dump_spec) {
    out << spec.to_json().dump(2) << "\n";
    return kExitOk;
  }
  if (o.out.empty()) throw ConfigError("synth needs --out");
  const Corpus c = synthesize(spec, o.seed);
  save_corpus(o.out, c);
  out << fmt::format("wrote {} dialogue(s) to {}\n", c.size(), o.out);
  return kExitOk;
}

int cmd_config(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = o.dump_defaults ? ExperimentConfig{} : experiment_config(o);
  out << cfg.to_json().dump(2) << "\n";
  return kExitOk;
}

void setup_logging(const std::string& level_flag) {
  std::string level = level_flag;
  if (level.empty()) {
    const char* env = std::getenv("FTRACK_LOG");
    level = env != nullptr ? env : "info";
  }
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError(fmt::format("unknown log level '{}'", level));
  auto logger = std::make_shared<spdlog::logger>("ftrack", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  logger->set_pattern("[%H:%M:%S] [%l] %v");
  logger->set_level(lvl);
  spdlog::set_default_logger(logger);
}

}  // namespace

std::string_view git_revision() { return FTRACK_GIT_REVISION; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Frame tracking for goal-oriented dialogue", "ftrack"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off (default: $FTRACK_LOG or info)");

  auto add_config = [&](CLI::App* c) {
    c->add_option("-c,--config", o.config, "experiment config (JSON)");
    c->add_option("--set", o.overrides, "override, e.g. train.lr=0.01 (repeatable)");
  };
  auto add_folds = [&](CLI::App* c) {
    c->add_option("--folds-file", o.folds_file, "JSON file with {\"folds\": [[dialogue ids], ...]}");
    c->add_option("--fold", o.fold_indices, "restrict to these fold indices (repeatable)");
    c->add_option("--jobs", o.jobs, "folds trained concurrently");
  };

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  stats->add_option("corpus", o.corpus, "corpus JSON")->required();
  stats->add_option("--format", o.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  stats->add_option("-o,--out", o.out, "also write the report as JSON");

  auto* train = app.add_subcommand("train", "train one model per fold");
  train->add_option("corpus", o.corpus, "corpus JSON")->required();
  train->add_option("-o,--out", o.out, "run directory")->required();
  add_config(train);
  add_folds(train);

  auto* eval = app.add_subcommand("eval", "evaluate a training run on its test folds");
  eval->add_option("corpus", o.corpus, "corpus JSON")->required();
  eval->add_option("-r,--run", o.run_dir, "run directory written by train")->required();
  eval->add_option("-o,--out", o.out, "report directory (default: <run>/eval)");
  eval->add_flag("--no-baseline", o.no_baseline, "skip the rule-based baseline");

  auto* predict = app.add_subcommand("predict", "frame references for every user turn");
  predict->add_option("corpus", o.corpus, "corpus JSON")->required();
  predict->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  predict->add_option("--dictionaries", o.dictionaries, "dictionaries the checkpoint was trained with");
  predict->add_flag("--baseline", o.baseline, "use the rule-based baseline instead of a model");
  predict->add_option("-o,--out", o.out, "output file (default: stdout)");
  add_config(predict);

  auto* lesion = app.add_subcommand("lesion", "retrain with inputs removed one at a time");
  lesion->add_option("corpus", o.corpus, "corpus JSON")->required();
  lesion->add_option("-o,--out", o.out, "output directory")->required();
  lesion->add_option("--remove", o.remove, "input to remove (repeatable; default: all nine)");
  add_config(lesion);
  add_folds(lesion);

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("spec", o.spec, "generation spec (JSON; default spec when omitted)");
  synth->add_option("-o,--out", o.out, "output corpus file");
  synth->add_option("--seed", o.seed, "random seed");
  synth->add_option("--dialogues", o.dialogues, "override the number of dialogues");
  synth->add_flag("--dump-spec", o.dump_spec, "print the effective spec and exit");

  auto* config = app.add_subcommand("config", "print the effective experiment config");
  config->add_flag("--dump-defaults", o.dump_defaults, "print every default");
  add_config(config);

  std::vector<std::string> argv_store = {"ftrack"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ftrack: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    setup_logging(o.log_level);
    if (*stats) return cmd_stats(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*predict) return cmd_predict(o, out);
    if (*lesion) return cmd_lesion(o, out);
    if (*synth) return cmd_synth(o, out);
    if (*config) return cmd_config(o, out);
  } catch (const CheckpointMismatch& e) {
    err << "ftrack: checkpoint mismatch: " << e.what() << "\n";
    return kExitCheckpointMismatch;
  } catch (const ConfigError& e) {
    err << "ftrack: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const LoadError& e) {
    err << "ftrack: input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& e) {
    err << "ftrack: input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DataError& e) {
    err << "ftrack: input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "ftrack: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ftrack
