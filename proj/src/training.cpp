#include "ftrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ftrack/error.hpp"
#include "ftrack/rng.hpp"

namespace ftrack {

namespace {

constexpr std::uint64_t kFoldSalt = 0xF01D;
constexpr std::uint64_t kValidationSalt = 0x7A11D;
constexpr std::uint64_t kEpochSalt = 0xE90C;

constexpr std::array<std::string_view, kTurnClassCount> kClassKeys = {
    "opening",
    "frame_change_new_value",
    "switch_without_values",
    "frame_change_offer",
    "frame_change_no_offer",
    "request_compare",
    "other_frame_reference",
    "no_change_new_value",
    "no_change_after_offer",
    "no_change_request",
    "other",
};

std::vector<std::string> pick_validation(std::vector<std::string>& train, double fraction, std::uint64_t seed,
                                         std::size_t fold) {
  Rng rng(Rng::derive(seed, kValidationSalt + fold));
  rng.shuffle(train);
  auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  if (n >= train.size()) n = train.empty() ? 0 : train.size() - 1;
  std::vector<std::string> val(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n));
  train.erase(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return val;
}

std::vector<FoldSpec> folds_from_tests(const Corpus& corpus, std::vector<std::vector<std::string>> tests,
                                       double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError(fmt::format("validation_fraction must lie in [0, 1), got {}", validation_fraction));
  }
  std::vector<FoldSpec> out;
  for (std::size_t k = 0; k < tests.size(); ++k) {
    FoldSpec f;
    f.index = k;
    std::set<std::string> test(tests[k].begin(), tests[k].end());
    for (const auto& d : corpus) {
      if (test.count(d.id) == 0) f.train.push_back(d.id);
    }
    std::sort(tests[k].begin(), tests[k].end());
    f.test = std::move(tests[k]);
    f.validation = pick_validation(f.train, validation_fraction, seed, k);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<const Dialogue*> select(const Corpus& corpus, const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, const Dialogue*> by_id;
  for (const auto& d : corpus) by_id.emplace(d.id, &d);
  std::vector<const Dialogue*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError(fmt::format("fold refers to unknown dialogue '{}'", id));
    out.push_back(it->second);
  }
  return out;
}

bool has_act(const Turn& t, std::string_view name) {
  return std::any_of(t.acts.begin(), t.acts.end(), [&](const DialogueAct& a) { return a.name == name; });
}

bool follows_offer(const Dialogue& d, std::size_t index) {
  return index > 1 && !d.turn(index - 1).is_user() && has_act(d.turn(index - 1), "offer");
}

Json mean_std_json(const MeanStd& m) { return Json{{"mean", m.mean}, {"std", m.std}}; }

Json tally_json(const Tally& t) { return Json{{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}}; }

std::string_view stop_metric_key(StopMetric m) {
  return m == StopMetric::kValidationLoss ? "validation_loss" : "validation_accuracy";
}

struct LossAndAccuracy {
  double loss = 0.0;
  Tally slot, act;
};

LossAndAccuracy score_turns(FrameTracker& model, const std::vector<EncodedTurn>& turns,
                            const std::vector<Targets>& targets) {
  LossAndAccuracy r;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    ad::Tape t;
    ForwardVars vars;
    const ForwardOutput out = model.forward(t, turns[i], &vars);
    r.loss += t.value(model.loss(t, vars, targets[i])).item();
    const ReferencePrediction p = model.predict(turns[i], out);
    const auto gold_t = gold_triple_frames(turns[i]);
    const auto gold_a = gold_act_frames(turns[i]);
    for (std::size_t k = 0; k < gold_t.size(); ++k) r.slot.add(p.triple_frames[k] == gold_t[k]);
    for (std::size_t k = 0; k < gold_a.size(); ++k) r.act.add(p.act_frames[k] == gold_a[k]);
  }
  if (!turns.empty()) r.loss /= static_cast<double>(turns.size());
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Folds

Json FoldSpec::to_json() const {
  return Json{{"index", index}, {"train", train}, {"validation", validation}, {"test", test}};
}

FoldSpec FoldSpec::from_json(const Json& j) {
  try {
    FoldSpec f;
    f.index = j.at("index").get<std::size_t>();
    f.train = j.at("train").get<std::vector<std::string>>();
    f.validation = j.at("validation").get<std::vector<std::string>>();
    f.test = j.at("test").get<std::vector<std::string>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("fold spec: {}", e.what()));
  }
}

std::vector<FoldSpec> make_folds(const Corpus& corpus, std::size_t k, double validation_fraction, std::uint64_t seed) {
  if (k < 2) throw ConfigError(fmt::format("need at least 2 folds, got {}", k));
  if (corpus.size() < k) {
    throw ConfigError(fmt::format("cannot split {} dialogues into {} folds", corpus.size(), k));
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed, kFoldSalt));
  rng.shuffle(order);
  std::vector<std::vector<std::string>> tests(k);
  for (std::size_t i = 0; i < order.size(); ++i) tests[i % k].push_back(corpus[order[i]].id);
  return folds_from_tests(corpus, std::move(tests), validation_fraction, seed);
}

std::vector<FoldSpec> load_folds(const std::filesystem::path& path, const Corpus& corpus, double validation_fraction,
                                 std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("cannot open folds file '{}'", path.string()));
  std::vector<std::vector<std::string>> tests;
  try {
    tests = Json::parse(in).at("folds").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("folds file '{}': {}", path.string(), e.what()));
  }
  std::map<std::string, std::size_t> seen;
  for (const auto& t : tests) {
    for (const auto& id : t) ++seen[id];
  }
  for (const auto& d : corpus) {
    auto it = seen.find(d.id);
    if (it == seen.end() || it->second != 1) {
      throw ValidationError(fmt::format("folds file '{}': dialogue '{}' must appear in exactly one fold", path.string(), d.id));
    }
    seen.erase(it);
  }
  if (!seen.empty()) {
    throw ValidationError(fmt::format("folds file '{}': unknown dialogue '{}'", path.string(), seen.begin()->first));
  }
  if (tests.size() < 2) throw ValidationError(fmt::format("folds file '{}': need at least 2 folds", path.string()));
  return folds_from_tests(corpus, std::move(tests), validation_fraction, seed);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (folds < 2) throw ConfigError(fmt::format("train.folds must be at least 2, got {}", folds));
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError(fmt::format("train.validation_fraction must lie in [0, 1), got {}", validation_fraction));
  }
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (patience == 0) throw ConfigError("train.patience must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (jobs == 0) throw ConfigError("train.jobs must be positive");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("train.eps must be positive");
}

Json TrainConfig::to_json() const {
  Json j;
  j["folds"] = folds;
  j["validation_fraction"] = validation_fraction;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["batch_size"] = batch_size;
  j["lr"] = adam.lr;
  j["beta1"] = adam.beta1;
  j["beta2"] = adam.beta2;
  j["eps"] = adam.eps;
  j["stop_metric"] = stop_metric_key(stop_metric);
  j["shuffle_constraints"] = shuffle_constraints;
  j["jobs"] = jobs;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "folds") c.folds = v.get<std::size_t>();
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "lr") c.adam.lr = v.get<double>();
      else if (key == "beta1") c.adam.beta1 = v.get<double>();
      else if (key == "beta2") c.adam.beta2 = v.get<double>();
      else if (key == "eps") c.adam.eps = v.get<double>();
      else if (key == "shuffle_constraints") c.shuffle_constraints = v.get<bool>();
      else if (key == "jobs") c.jobs = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "stop_metric") {
        const auto s = v.get<std::string>();
        if (s == "validation_loss") c.stop_metric = StopMetric::kValidationLoss;
        else if (s == "validation_accuracy") c.stop_metric = StopMetric::kValidationAccuracy;
        else throw ConfigError(fmt::format("unknown train.stop_metric '{}'", s));
      } else {
        throw ConfigError(fmt::format("unknown train config key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  c.validate();
  return c;
}

Json TrainResult::history_json() const {
  Json epochs = Json::array();
  for (const auto& e : history) {
    epochs.push_back(Json{{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_loss", e.validation_loss},
                          {"validation_slot_accuracy", e.validation_slot_accuracy},
                          {"validation_act_accuracy", e.validation_act_accuracy}});
  }
  return Json{{"best_epoch", best_epoch}, {"early_stopped", early_stopped}, {"epochs", std::move(epochs)}};
}

TrainResult train_fold(const Corpus& corpus, const FoldSpec& fold, const ModelConfig& model_cfg,
                       const TrainConfig& cfg, InputMask mask, const EpochCallback& on_epoch) {
  model_cfg.validate();
  cfg.validate();
  const auto train_d = select(corpus, fold.train);
  const auto val_d = select(corpus, fold.validation);
  if (train_d.empty()) throw ConfigError(fmt::format("fold {} has no training dialogues", fold.index));

  Dictionaries dict = Dictionaries::build(train_d, model_cfg.encoding.trigram_cap);
  const auto train = encode_user_turns(train_d, dict, model_cfg.encoding, mask);
  const auto val = encode_user_turns(val_d, dict, model_cfg.encoding, mask);
  std::vector<Targets> train_tgt, val_tgt;
  for (const auto& t : train) train_tgt.push_back(build_targets(t));
  for (const auto& t : val) val_tgt.push_back(build_targets(t));

  TrainResult r{dict, FrameTracker(model_cfg, dict), {}, 0, false};
  FrameTracker& model = r.model;
  ad::Adam adam(model.params(), cfg.adam);
  Rng rng(Rng::derive(cfg.seed, kEpochSalt + fold.index));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<ad::Tensor> best_params = model.params().snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 1; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        EncodedTurn turn = train[order[b]];
        if (cfg.shuffle_constraints) {
          for (auto& f : turn.frames) rng.shuffle(f);
        }
        ad::Tape t;
        ForwardVars vars;
        model.forward(t, turn, &vars);
        const ad::Var loss = model.loss(t, vars, train_tgt[order[b]]);
        const double value = t.value(loss).item();
        if (!std::isfinite(value)) {
          throw TrainingDiverged(fmt::format("fold {} epoch {} batch {}: non-finite loss on dialogue '{}' turn {}",
                                             fold.index, epoch, batch, turn.dialogue_id, turn.turn_index));
        }
        epoch_loss += value;
        t.backward(loss, scale);
      }
      try {
        adam.step();
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(fmt::format("fold {} epoch {} batch {}: {}", fold.index, epoch, batch, e.what()));
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train.empty() ? 0.0 : epoch_loss / static_cast<double>(train.size());
    const bool has_val = !val.empty();
    const LossAndAccuracy s = score_turns(model, has_val ? val : train, has_val ? val_tgt : train_tgt);
    rec.validation_loss = s.loss;
    rec.validation_slot_accuracy = s.slot.accuracy();
    rec.validation_act_accuracy = s.act.accuracy();
    r.history.push_back(rec);
    if (on_epoch) on_epoch(fold.index, rec);
    spdlog::debug("fold {} epoch {}: train loss {:.5f}, validation loss {:.5f}, slot {:.2f}%, act {:.2f}%", fold.index,
                  epoch, rec.train_loss, rec.validation_loss, rec.validation_slot_accuracy, rec.validation_act_accuracy);

    const double metric = cfg.stop_metric == StopMetric::kValidationLoss
                              ? rec.validation_loss
                              : -(rec.validation_slot_accuracy + rec.validation_act_accuracy);
    if (!std::isfinite(rec.validation_loss)) {
      throw TrainingDiverged(fmt::format("fold {} epoch {}: non-finite validation loss", fold.index, epoch));
    }
    if (metric < best) {
      best = metric;
      r.best_epoch = epoch;
      best_params = model.params().snapshot();
    } else if (epoch - r.best_epoch >= cfg.patience) {
      r.early_stopped = true;
      break;
    }
  }
  model.params().restore(best_params);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string_view turn_class_key(TurnClass c) { return kClassKeys[static_cast<std::size_t>(c)]; }

TurnClass classify_turn(const Dialogue& d, std::size_t index) {
  const Turn& t = d.turn(index);
  if (t.changes_frame()) {
    bool created_here = false;
    for (FrameId id : frames_created_in_turn(d, index)) created_here = created_here || id == t.active_after;
    if (created_here) return TurnClass::kFrameChangeNewValue;
    for (const auto& a : t.acts) {
      if (a.name == "switch_frame" && a.args.empty()) return TurnClass::kSwitchWithoutValues;
    }
    return follows_offer(d, index) ? TurnClass::kFrameChangeOffer : TurnClass::kFrameChangeNoOffer;
  }
  bool earlier_user = false;
  for (std::size_t i = 1; i < index; ++i) earlier_user = earlier_user || d.turn(i).is_user();
  if (!earlier_user) return TurnClass::kOpening;
  if (has_act(t, "request_compare")) return TurnClass::kRequestCompare;
  for (const auto& a : t.acts) {
    for (FrameId f : a.refs) {
      if (f != t.active_after) return TurnClass::kOtherFrameReference;
    }
    for (const auto& arg : a.args) {
      if (arg.ref != t.active_after) return TurnClass::kOtherFrameReference;
    }
  }
  for (const auto& a : t.acts) {
    if (a.name != "inform") continue;
    for (const auto& arg : a.args) {
      if (!arg.value.value.empty()) return TurnClass::kNoChangeNewValue;
    }
  }
  if (follows_offer(d, index)) return TurnClass::kNoChangeAfterOffer;
  if (!t.acts.empty() &&
      std::all_of(t.acts.begin(), t.acts.end(), [](const DialogueAct& a) { return a.name == "request"; })) {
    return TurnClass::kNoChangeRequest;
  }
  return TurnClass::kOther;
}

FoldEval evaluate_fold(const Corpus& corpus, const std::vector<std::string>& dialogue_ids, const Dictionaries& dict,
                       const EncodingConfig& enc, InputMask mask, const Predictor& predict, std::size_t fold) {
  FoldEval out;
  out.fold = fold;
  for (const Dialogue* d : select(corpus, dialogue_ids)) {
    for (const auto& turn : d->turns) {
      if (!turn.is_user()) continue;
      const EncodedTurn et = encode_turn(*d, turn.index, dict, enc, mask);
      const ReferencePrediction p = predict(*d, et);
      TurnEval te;
      te.dialogue_id = d->id;
      te.turn_index = turn.index;
      te.turn_class = classify_turn(*d, turn.index);
      const auto gold_t = gold_triple_frames(et);
      const auto gold_a = gold_act_frames(et);
      if (p.triple_frames.size() != gold_t.size() || p.act_frames.size() != gold_a.size()) {
        throw ShapeError(fmt::format("dialogue '{}' turn {}: prediction does not cover every triple and act", d->id,
                                     turn.index));
      }
      for (std::size_t k = 0; k < gold_t.size(); ++k) {
        const bool ok = p.triple_frames[k] == gold_t[k];
        te.triple_keys.emplace_back(et.act_names[et.triples[k].act_position], et.triple_values[k].slot);
        te.triple_correct.push_back(ok);
        out.slot.add(ok);
      }
      for (std::size_t k = 0; k < gold_a.size(); ++k) {
        const bool ok = p.act_frames[k] == gold_a[k];
        te.act_correct.push_back(ok);
        out.act.add(ok);
      }
      out.turns.push_back(std::move(te));
    }
  }
  return out;
}

FoldEval evaluate_model(FrameTracker& model, const Dictionaries& dict, const Corpus& corpus, const FoldSpec& fold,
                        InputMask mask) {
  return evaluate_fold(corpus, fold.test, dict, model.config().encoding, mask,
                       [&](const Dialogue&, const EncodedTurn& t) { return model.predict(t); }, fold.index);
}

FoldEval evaluate_baseline(const Corpus& corpus, const FoldSpec& fold, const BaselineRules& rules,
                           const EncodingConfig& enc) {
  const Dictionaries none;
  return evaluate_fold(corpus, fold.test, none, enc, {},
                       [&](const Dialogue& d, const EncodedTurn& t) { return baseline_predict(d, t.turn_index, rules); },
                       fold.index);
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

MetricsReport summarize(std::string system, const std::vector<FoldEval>& folds, std::size_t act_slot_min_count) {
  MetricsReport r;
  r.system = std::move(system);
  r.act_slot_min_count = act_slot_min_count;
  for (std::size_t c = 0; c < kTurnClassCount; ++c) r.classes[c].turn_class = static_cast<TurnClass>(c);
  std::map<std::pair<std::string, std::string>, Tally> pairs;
  for (const auto& f : folds) {
    r.folds.push_back(f.fold);
    r.fold_slot_accuracy.push_back(f.slot.accuracy());
    r.fold_act_accuracy.push_back(f.act.accuracy());
    for (const auto& t : f.turns) {
      ++r.turns;
      ClassRow& row = r.classes[static_cast<std::size_t>(t.turn_class)];
      ++row.turns;
      for (std::size_t k = 0; k < t.triple_correct.size(); ++k) {
        row.slot.add(t.triple_correct[k]);
        pairs[t.triple_keys[k]].add(t.triple_correct[k]);
      }
      for (bool ok : t.act_correct) row.act.add(ok);
    }
  }
  r.slot = mean_std(r.fold_slot_accuracy);
  r.act = mean_std(r.fold_act_accuracy);
  for (const auto& [key, tally] : pairs) {
    if (tally.total > act_slot_min_count) r.act_slots.push_back(ActSlotRow{key.first, key.second, tally});
  }
  return r;
}

Json MetricsReport::to_json() const {
  Json j;
  j["system"] = system;
  j["folds"] = folds;
  j["turns"] = turns;
  j["slot_accuracy"] = mean_std_json(slot);
  j["act_accuracy"] = mean_std_json(act);
  j["fold_slot_accuracy"] = fold_slot_accuracy;
  j["fold_act_accuracy"] = fold_act_accuracy;
  Json classes_j = Json::array();
  for (const auto& c : classes) {
    classes_j.push_back(Json{{"class", turn_class_key(c.turn_class)},
                             {"turns", c.turns},
                             {"slot", tally_json(c.slot)},
                             {"act", tally_json(c.act)}});
  }
  j["classes"] = std::move(classes_j);
  Json pairs_j = Json::array();
  for (const auto& p : act_slots) {
    pairs_j.push_back(Json{{"act", p.act}, {"slot", p.slot}, {"slot_accuracy", tally_json(p.slot_accuracy)}});
  }
  j["act_slot_min_count"] = act_slot_min_count;
  j["act_slots"] = std::move(pairs_j);
  return j;
}

std::string MetricsReport::to_csv() const {
  std::string out = "system,table,key,correct,total,accuracy\n";
  auto row = [&](std::string_view table, std::string_view key, std::size_t correct, std::size_t total, double acc) {
    out += fmt::format("{},{},{},{},{},{:.4f}\n", system, table, key, correct, total, acc);
  };
  for (std::size_t i = 0; i < folds.size(); ++i) {
    row("fold_slot", std::to_string(folds[i]), 0, 0, fold_slot_accuracy[i]);
    row("fold_act", std::to_string(folds[i]), 0, 0, fold_act_accuracy[i]);
  }
  out += fmt::format("{},summary,slot_mean,,,{:.4f}\n{},summary,slot_std,,,{:.4f}\n", system, slot.mean, system, slot.std);
  out += fmt::format("{},summary,act_mean,,,{:.4f}\n{},summary,act_std,,,{:.4f}\n", system, act.mean, system, act.std);
  for (const auto& c : classes) {
    row("class_slot", turn_class_key(c.turn_class), c.slot.correct, c.slot.total, c.slot.accuracy());
    row("class_act", turn_class_key(c.turn_class), c.act.correct, c.act.total, c.act.accuracy());
  }
  for (const auto& p : act_slots) {
    row("act_slot", fmt::format("{}({})", p.act, p.slot), p.slot_accuracy.correct, p.slot_accuracy.total,
        p.slot_accuracy.accuracy());
  }
  return out;
}

std::string format_report(const MetricsReport& r) {
  std::string out = fmt::format("{} over {} fold(s), {} user turns\n", r.system, r.folds.size(), r.turns);
  out += fmt::format("  slot-based  {:6.2f} +- {:.2f}\n", r.slot.mean, r.slot.std);
  out += fmt::format("  act-based   {:6.2f} +- {:.2f}\n", r.act.mean, r.act.std);
  out += "  class                      turns  slot acc  act acc\n";
  for (const auto& c : r.classes) {
    out += fmt::format("  {:<25} {:6}  {:7.2f}  {:7.2f}\n", turn_class_key(c.turn_class), c.turns, c.slot.accuracy(),
                       c.act.accuracy());
  }
  if (!r.act_slots.empty()) {
    out += fmt::format("  act(slot) with more than {} triples\n", r.act_slot_min_count);
    for (const auto& p : r.act_slots) {
      out += fmt::format("  {:<32} {:6}  {:7.2f}\n", fmt::format("{}({})", p.act, p.slot), p.slot_accuracy.total,
                         p.slot_accuracy.accuracy());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lesion study

Json LesionTable::to_json() const {
  Json j;
  j["reference"] = Json{{"slot", mean_std_json(reference_slot)}, {"act", mean_std_json(reference_act)}};
  Json cols = Json::array();
  for (const auto& c : columns) {
    cols.push_back(Json{{"input", input_key(c.input)},
                        {"label", input_label(c.input)},
                        {"slot", mean_std_json(c.slot)},
                        {"act", mean_std_json(c.act)}});
  }
  j["columns"] = std::move(cols);
  return j;
}

std::string LesionTable::to_csv() const {
  std::string out = "Lesion";
  for (const auto& c : columns) out += fmt::format(",{}", input_label(c.input));
  out += "\nSlot-based";
  for (const auto& c : columns) out += fmt::format(",{:.2f}", c.slot.mean);
  out += "\nAct-based";
  for (const auto& c : columns) out += fmt::format(",{:.2f}", c.act.mean);
  out += "\n";
  return out;
}

std::string LesionTable::format() const {
  std::string out = fmt::format("{:<11}", "Lesion");
  for (const auto& c : columns) out += fmt::format(" {:>9}", input_label(c.input));
  out += fmt::format("\n{:<11}", "Slot-based");
  for (const auto& c : columns) out += fmt::format(" {:9.1f}", c.slot.mean);
  out += fmt::format("\n{:<11}", "Act-based");
  for (const auto& c : columns) out += fmt::format(" {:9.1f}", c.act.mean);
  out += fmt::format("\nnothing removed: slot-based {:.1f}, act-based {:.1f}\n", reference_slot.mean, reference_act.mean);
  return out;
}

LesionTable lesion_study(const Corpus& corpus, const std::vector<FoldSpec>& folds, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const std::vector<Input>& inputs) {
  if (folds.empty()) throw ConfigError("lesion study needs at least one fold");
  // Run 0 removes nothing; run i removes inputs[i-1].
  const std::size_t runs = inputs.size() + 1;
  std::vector<double> slot(runs * folds.size()), act(runs * folds.size());
  parallel_for(runs * folds.size(), cfg.jobs, [&](std::size_t job) {
    const std::size_t run = job / folds.size(), k = job % folds.size();
    InputMask mask;
    if (run > 0) mask.remove(inputs[run - 1]);
    TrainResult r = train_fold(corpus, folds[k], model_cfg, cfg, mask);
    const FoldEval e = evaluate_model(r.model, r.dictionaries, corpus, folds[k], mask);
    slot[job] = e.slot.accuracy();
    act[job] = e.act.accuracy();
    spdlog::info("lesion {}: fold {} slot {:.2f}% act {:.2f}%", run == 0 ? "none" : input_key(inputs[run - 1]),
                 folds[k].index, slot[job], act[job]);
  });
  auto column = [&](std::size_t run, std::vector<double>& xs) {
    return mean_std(std::vector<double>(xs.begin() + static_cast<std::ptrdiff_t>(run * folds.size()),
                                        xs.begin() + static_cast<std::ptrdiff_t>((run + 1) * folds.size())));
  };
  LesionTable t;
  t.reference_slot = column(0, slot);
  t.reference_act = column(0, act);
  for (std::size_t i = 0; i < inputs.size(); ++i) t.columns.push_back(LesionColumn{inputs[i], column(i + 1, slot), column(i + 1, act)});
  return t;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n || error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ftrack
