#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "ftrack/error.hpp"
#include "ftrack/synth.hpp"
#include "ftrack/training.hpp"
#include "../support/tiny.hpp"

using namespace ftrack;
using ftrack::testing::tiny_config;

namespace {

Corpus small_corpus(std::size_t n = 12, std::uint64_t seed = 5) {
  SynthSpec s;
  s.dialogues = n;
  s.min_user_turns = 2;
  s.max_user_turns = 3;
  return synthesize(s, seed);
}

TrainConfig quick(std::size_t epochs = 2) {
  TrainConfig c;
  c.folds = 3;
  c.max_epochs = epochs;
  c.batch_size = 8;
  c.adam.lr = 1e-2;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ftrack_training_" + name);
}

// Gold references as a predictor.
ReferencePrediction oracle(const Dialogue&, const EncodedTurn& t) {
  return ReferencePrediction{gold_triple_frames(t), {}, gold_act_frames(t), {}};
}

}  // namespace

TEST_CASE("folds partition the corpus") {
  const Corpus c = small_corpus(23);
  const auto folds = make_folds(c, 10, 0.2, 3);
  REQUIRE(folds.size() == 10);
  std::multiset<std::string> tested;
  for (const auto& f : folds) {
    tested.insert(f.test.begin(), f.test.end());
    CHECK(f.test.size() >= 2);
    CHECK(f.test.size() <= 3);
    std::set<std::string> all;
    all.insert(f.train.begin(), f.train.end());
    all.insert(f.validation.begin(), f.validation.end());
    all.insert(f.test.begin(), f.test.end());
    CHECK(all.size() == c.size());  // disjoint and complete
    CHECK(f.train.size() + f.validation.size() + f.test.size() == c.size());
    const double pool = static_cast<double>(f.train.size() + f.validation.size());
    CHECK(f.validation.size() == static_cast<std::size_t>(std::llround(0.2 * pool)));
  }
  CHECK(tested.size() == c.size());
  for (const auto& d : c) CHECK(tested.count(d.id) == 1);
  CHECK(make_folds(c, 10, 0.2, 3) == folds);
  CHECK_FALSE(make_folds(c, 10, 0.2, 4) == folds);
  CHECK_THROWS_AS(make_folds(c, 1, 0.2, 3), ConfigError);
  CHECK_THROWS_AS(make_folds(c, 30, 0.2, 3), ConfigError);
  CHECK_THROWS_AS(make_folds(c, 5, 1.0, 3), ConfigError);
  for (const auto& f : folds) CHECK(FoldSpec::from_json(f.to_json()) == f);
}

TEST_CASE("folds from a file") {
  const Corpus c = small_corpus(6);
  const auto path = temp_file("folds.json");
  std::vector<std::vector<std::string>> tests = {{c[0].id, c[1].id, c[2].id}, {c[3].id, c[4].id, c[5].id}};
  {
    std::ofstream out(path);
    out << Json{{"folds", tests}}.dump();
  }
  const auto folds = load_folds(path, c, 0.0, 1);
  REQUIRE(folds.size() == 2);
  CHECK(folds[0].test == tests[0]);
  CHECK(folds[0].train == tests[1]);
  CHECK(folds[1].validation.empty());

  {
    std::ofstream out(path);
    out << Json{{"folds", {{c[0].id}, {c[1].id}}}}.dump();
  }
  CHECK_THROWS_AS(load_folds(path, c, 0.2, 1), ValidationError);
  {
    std::ofstream out(path);
    out << Json{{"folds", {{c[0].id, c[1].id, c[2].id, c[3].id}, {c[4].id, c[5].id, c[0].id}}}}.dump();
  }
  CHECK_THROWS_AS(load_folds(path, c, 0.2, 1), ValidationError);
  {
    std::ofstream out(path);
    out << "{\"splits\": []}";
  }
  CHECK_THROWS_AS(load_folds(path, c, 0.2, 1), LoadError);
  std::filesystem::remove(path);
}

TEST_CASE("train config round trip and validation") {
  const TrainConfig def;
  CHECK(TrainConfig::from_json(def.to_json()) == def);
  CHECK(def.adam.lr == 1e-3);
  CHECK(def.patience == 10);
  CHECK(def.folds == 10);
  CHECK(def.validation_fraction == 0.2);
  CHECK_THROWS_AS(TrainConfig::from_json(Json{{"learning_rate", 0.1}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(Json{{"patience", 0}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(Json{{"lr", -1.0}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(Json{{"stop_metric", "luck"}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(Json{{"batch_size", "many"}}), ConfigError);
  CHECK(TrainConfig::from_json(Json{{"stop_metric", "validation_accuracy"}}).stop_metric ==
        StopMetric::kValidationAccuracy);
}

TEST_CASE("turn classes on the offers fixture") {
  const Dialogue d = load_corpus(FTRACK_TEST_DATA "/wizard_offers.json").at(0);
  CHECK(classify_turn(d, 1) == TurnClass::kOpening);
  CHECK(classify_turn(d, 3) == TurnClass::kFrameChangeOffer);

  Dialogue bare = d;
  bare.turns[2].acts.erase(bare.turns[2].acts.begin());
  bare.turns[2].acts.insert(bare.turns[2].acts.begin(), DialogueAct{"switch_frame", {}, {3}});
  CHECK(classify_turn(bare, 3) == TurnClass::kSwitchWithoutValues);

  Dialogue stay = d;
  stay.turns[2].active_after = 1;
  stay.turns[2].acts = {DialogueAct{"request_compare", {}, {2, 3}}};
  CHECK(classify_turn(stay, 3) == TurnClass::kRequestCompare);
  stay.turns[2].acts = {DialogueAct{"negate", {ActArg{{"dst_city", "Paris"}, 3}}, {3}}};
  CHECK(classify_turn(stay, 3) == TurnClass::kOtherFrameReference);
  stay.turns[2].acts = {DialogueAct{"inform", {ActArg{{"category", "5"}, 1}}, {1}}};
  CHECK(classify_turn(stay, 3) == TurnClass::kNoChangeNewValue);
  stay.turns[2].acts = {DialogueAct{"request", {ActArg{{"price", ""}, 1}}, {1}}};
  CHECK(classify_turn(stay, 3) == TurnClass::kNoChangeAfterOffer);
  stay.turns[1].acts.clear();
  CHECK(classify_turn(stay, 3) == TurnClass::kNoChangeRequest);
  stay.turns[2].acts = {DialogueAct{"thankyou", {}, {1}}};
  CHECK(classify_turn(stay, 3) == TurnClass::kOther);
}

TEST_CASE("turn classes on single-behavior corpora") {
  SUBCASE("switches after offers") {
    SynthSpec s;
    s.mixture.fill(0.0);
    s.set_weight(Behavior::kSwitchValue, 1.0);
    s.offer_rate = 1.0;
    s.dialogues = 20;
    for (const auto& d : synthesize(s, 2)) {
      for (const auto& t : d.turns) {
        if (t.is_user() && t.index > 1) CHECK(classify_turn(d, t.index) == TurnClass::kFrameChangeOffer);
      }
    }
  }
  SUBCASE("conflicts") {
    SynthSpec s;
    s.mixture.fill(0.0);
    s.set_weight(Behavior::kNewConflict, 1.0);
    s.dialogues = 20;
    for (const auto& d : synthesize(s, 2)) {
      for (const auto& t : d.turns) {
        if (t.is_user() && t.index > 1) CHECK(classify_turn(d, t.index) == TurnClass::kFrameChangeNewValue);
      }
    }
  }
}

TEST_CASE("evaluation metrics") {
  const Corpus c = small_corpus(10);
  const auto folds = make_folds(c, 2, 0.2, 1);
  const Dictionaries none;

  SUBCASE("gold predictions score 100") {
    const FoldEval e = evaluate_fold(c, folds[0].test, none, {}, {}, oracle);
    CHECK(e.slot.total > 0);
    CHECK(e.slot.accuracy() == 100.0);
    CHECK(e.act.accuracy() == 100.0);
  }

  SUBCASE("act sets must match exactly") {
    const Dialogue d = load_corpus(FTRACK_TEST_DATA "/wizard_offers.json").at(0);
    const Corpus one = {d};
    const FoldEval e = evaluate_fold(one, {d.id}, none, {}, {}, [](const Dialogue& dd, const EncodedTurn& t) {
      auto p = oracle(dd, t);
      if (t.turn_index == 3) p.act_frames[0] = {2, 3};  // gold {3}
      return p;
    });
    CHECK(e.act.total == 3);
    CHECK(e.act.correct == 2);
    CHECK(e.slot.accuracy() == 100.0);
  }

  SUBCASE("prediction shape is checked") {
    CHECK_THROWS_AS(evaluate_fold(c, folds[0].test, none, {}, {},
                                  [](const Dialogue&, const EncodedTurn&) { return ReferencePrediction{}; }),
                    ShapeError);
  }

  SUBCASE("report decomposes over classes") {
    std::vector<FoldEval> evals;
    for (const auto& f : folds) {
      evals.push_back(evaluate_fold(c, f.test, none, {}, {}, [](const Dialogue& d, const EncodedTurn& t) {
        return baseline_predict(d, t.turn_index);
      }, f.index));
    }
    const MetricsReport r = summarize("baseline", evals, 10);
    std::size_t turns = 0;
    Tally slot, act;
    for (const auto& row : r.classes) {
      turns += row.turns;
      slot.add(row.slot);
      act.add(row.act);
    }
    CHECK(turns == r.turns);
    Tally direct_slot, direct_act;
    for (const auto& e : evals) {
      direct_slot.add(e.slot);
      direct_act.add(e.act);
    }
    CHECK(slot == direct_slot);
    CHECK(act == direct_act);
    for (const auto& p : r.act_slots) CHECK(p.slot_accuracy.total > 10);
    CHECK(r.fold_slot_accuracy.size() == 2);
    CHECK(r.slot.mean == doctest::Approx((r.fold_slot_accuracy[0] + r.fold_slot_accuracy[1]) / 2));

    const Json j = r.to_json();
    CHECK(j["classes"].size() == kTurnClassCount);
    const std::string csv = r.to_csv();
    CHECK(csv.rfind("system,table,key,correct,total,accuracy\n", 0) == 0);
    CHECK(csv.find("class_slot,frame_change_new_value") != std::string::npos);
    CHECK(format_report(r).find("slot-based") != std::string::npos);
  }
}

TEST_CASE("act-slot breakdown filter") {
  FoldEval e;
  TurnEval t;
  t.turn_class = TurnClass::kNoChangeRequest;
  for (int i = 0; i < 11; ++i) {
    t.triple_keys.emplace_back("request", "price");
    t.triple_correct.push_back(i % 2 == 0);
  }
  for (int i = 0; i < 10; ++i) {
    t.triple_keys.emplace_back("inform", "seat");
    t.triple_correct.push_back(true);
  }
  e.turns.push_back(t);
  const MetricsReport r = summarize("x", {e}, 10);
  REQUIRE(r.act_slots.size() == 1);  // inform(seat) has only 10
  CHECK(r.act_slots[0].act == "request");
  CHECK(r.act_slots[0].slot == "price");
  CHECK(r.act_slots[0].slot_accuracy.correct == 6);
  CHECK(summarize("x", {e}, 9).act_slots.size() == 2);
}

TEST_CASE("mean and sample std") {
  CHECK(mean_std({}).mean == 0.0);
  CHECK(mean_std({5.0}).std == 0.0);
  const MeanStd m = mean_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  CHECK(m.mean == doctest::Approx(5.0));
  CHECK(m.std == doctest::Approx(std::sqrt(32.0 / 7.0)));
}

TEST_CASE("training is reproducible bit for bit") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c, 3, 0.2, 1);
  const TrainConfig cfg = quick(2);
  TrainResult a = train_fold(c, folds[0], tiny_config(), cfg);
  TrainResult b = train_fold(c, folds[0], tiny_config(), cfg);
  CHECK(a.model.params().to_json().dump() == b.model.params().to_json().dump());
  CHECK(a.history_json().dump() == b.history_json().dump());
  CHECK(a.dictionaries == b.dictionaries);
  const FoldEval ea = evaluate_model(a.model, a.dictionaries, c, folds[0]);
  const FoldEval eb = evaluate_model(a.model, a.dictionaries, c, folds[0]);
  CHECK(summarize("m", {ea}).to_json().dump() == summarize("m", {eb}).to_json().dump());

  TrainConfig other = cfg;
  other.seed = 2;
  TrainResult d = train_fold(c, folds[0], tiny_config(), other);
  CHECK(a.model.params().to_json().dump() != d.model.params().to_json().dump());
}

TEST_CASE("dictionaries come from the training portion") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c, 3, 0.2, 1);
  TrainResult r = train_fold(c, folds[1], tiny_config(), quick(1));
  std::vector<const Dialogue*> train;
  for (const auto& d : c) {
    if (std::find(folds[1].train.begin(), folds[1].train.end(), d.id) != folds[1].train.end()) train.push_back(&d);
  }
  CHECK(r.dictionaries == Dictionaries::build(train, tiny_config().encoding.trigram_cap));
}

TEST_CASE("early stopping") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c, 3, 0.2, 1);

  SUBCASE("stops after patience epochs without improvement and keeps the best weights") {
    TrainConfig cfg = quick(40);
    cfg.patience = 2;
    cfg.adam.lr = 0.05;
    TrainResult r = train_fold(c, folds[0], tiny_config(), cfg);
    REQUIRE(!r.history.empty());
    double best = r.history[0].validation_loss;
    std::size_t best_epoch = 1;
    for (const auto& e : r.history) {
      if (e.validation_loss < best) {
        best = e.validation_loss;
        best_epoch = e.epoch;
      }
    }
    CHECK(r.best_epoch == best_epoch);
    if (r.early_stopped) {
      CHECK(r.history.size() == r.best_epoch + cfg.patience);
    } else {
      CHECK(r.history.size() == cfg.max_epochs);
    }
    // the restored weights reproduce the best validation loss
    const auto val_ids = folds[0].validation;
    std::vector<const Dialogue*> val;
    for (const auto& d : c) {
      if (std::find(val_ids.begin(), val_ids.end(), d.id) != val_ids.end()) val.push_back(&d);
    }
    double loss = 0.0;
    const auto turns = encode_user_turns(val, r.dictionaries, r.model.config().encoding);
    for (const auto& t : turns) {
      ad::Tape tape;
      ForwardVars vars;
      r.model.forward(tape, t, &vars);
      loss += tape.value(r.model.loss(tape, vars, build_targets(t))).item();
    }
    CHECK(loss / static_cast<double>(turns.size()) == doctest::Approx(best).epsilon(1e-12));
  }

  SUBCASE("strictly improving validation loss runs every epoch") {
    TrainConfig cfg = quick(4);
    cfg.patience = 1;
    cfg.adam.lr = 1e-3;
    TrainResult r = train_fold(c, folds[0], tiny_config(), cfg);
    bool improving = true;
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      improving = improving && r.history[i].validation_loss < r.history[i - 1].validation_loss;
    }
    REQUIRE(improving);
    CHECK_FALSE(r.early_stopped);
    CHECK(r.history.size() == 4);
    CHECK(r.best_epoch == 4);
  }

  SUBCASE("without validation dialogues the training set is monitored") {
    auto f = make_folds(c, 3, 0.0, 1);
    CHECK(f[0].validation.empty());
    TrainResult r = train_fold(c, f[0], tiny_config(), quick(1));
    CHECK(r.history.size() == 1);
    CHECK(std::isfinite(r.history[0].validation_loss));
  }
}

TEST_CASE("divergence is reported") {
  const Corpus c = small_corpus();
  const auto folds = make_folds(c, 3, 0.2, 1);
  TrainConfig cfg = quick(5);
  cfg.adam.lr = 1e300;
  CHECK_THROWS_AS(train_fold(c, folds[0], tiny_config(), cfg), TrainingDiverged);
}

TEST_CASE("lesion study shape") {
  const Corpus c = small_corpus(9);
  const auto folds = make_folds(c, 3, 0.2, 1);
  const std::vector<FoldSpec> two(folds.begin(), folds.begin() + 2);
  const TrainConfig cfg = quick(1);
  const LesionTable t = lesion_study(c, two, tiny_config(), cfg);
  REQUIRE(t.columns.size() == 9);
  const std::vector<std::string> labels = {"Full Acts", "Only Acts", "Frames", "Text", "h_c", "h_d", "f_n", "S_L", "f_c"};
  for (std::size_t i = 0; i < 9; ++i) CHECK(input_label(t.columns[i].input) == labels[i]);
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("Lesion,Full Acts,Only Acts,Frames,Text,h_c,h_d,f_n,S_L,f_c\nSlot-based,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(t.to_json()["columns"].size() == 9);

  // removing nothing matches a plain train + evaluate
  std::vector<double> slot;
  for (const auto& f : two) {
    TrainResult r = train_fold(c, f, tiny_config(), cfg);
    slot.push_back(evaluate_model(r.model, r.dictionaries, c, f).slot.accuracy());
  }
  CHECK(t.reference_slot.mean == mean_std(slot).mean);

  // threads do not change results
  TrainConfig par = cfg;
  par.jobs = 3;
  const LesionTable p = lesion_study(c, two, tiny_config(), par, {Input::kStringSimilarity});
  CHECK(p.reference_slot.mean == t.reference_slot.mean);
  CHECK(p.columns[0].slot.mean == t.columns[7].slot.mean);
}

TEST_CASE("parallel_for runs every index and rethrows") {
  std::vector<int> hit(50, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw ConfigError("boom");
                  }),
                  ConfigError);
}
