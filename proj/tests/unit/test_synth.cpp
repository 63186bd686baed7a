#include <algorithm>
#include <set>

#include "doctest.h"
#include "ftrack/baseline.hpp"
#include "ftrack/error.hpp"
#include "ftrack/synth.hpp"

using namespace ftrack;

namespace {

SynthSpec only(Behavior b, std::size_t dialogues = 30) {
  SynthSpec s;
  s.mixture.fill(0.0);
  s.set_weight(b, 1.0);
  s.dialogues = dialogues;
  return s;
}

}  // namespace

TEST_CASE("synth is deterministic per seed") {
  SynthSpec s;
  s.dialogues = 20;
  const std::string a = corpus_to_json(synthesize(s, 3)).dump();
  const std::string b = corpus_to_json(synthesize(s, 3)).dump();
  CHECK(a == b);
  CHECK(a != corpus_to_json(synthesize(s, 4)).dump());
}

TEST_CASE("synth output reloads as a valid corpus") {
  SynthSpec s;
  s.dialogues = 40;
  const Corpus c = synthesize(s, 1);
  REQUIRE(c.size() == 40);
  const Corpus back = parse_corpus(corpus_to_json(c));
  CHECK(back == c);
  for (const auto& d : c) {
    CHECK(d.turns.front().is_user());
    CHECK(d.turns.back().is_user());
    const std::size_t user = std::count_if(d.turns.begin(), d.turns.end(), [](const Turn& t) { return t.is_user(); });
    CHECK(user >= 1 + s.min_user_turns);
    CHECK(user <= 1 + s.max_user_turns);
  }
}

TEST_CASE("synth cities never match each other") {
  // every generated destination is distinguishable by the 0.8 similarity rule
  SynthSpec s;
  s.dialogues = 10;
  std::set<std::string> cities;
  for (const auto& d : synthesize(s, 2)) {
    for (const auto& f : d.frames) {
      if (const SlotValue* v = f.current_value("dst_city")) cities.insert(v->value);
    }
  }
  REQUIRE(cities.size() > 10);
  for (const auto& a : cities) {
    for (const auto& b : cities) {
      if (a != b) CHECK(value_similarity(a, b) < 0.8);
    }
  }
}

TEST_CASE("synth conflicting values only create frames") {
  const Corpus c = synthesize(only(Behavior::kNewConflict), 5);
  std::size_t changes = 0;
  for (const auto& d : c) {
    for (const auto& t : d.turns) {
      if (!t.is_user() || !t.changes_frame()) continue;
      ++changes;
      CHECK(d.frames[t.active_after - 1].created_at_turn == t.index);
      CHECK(d.frames[t.active_after - 1].creator == Author::kUser);
    }
  }
  CHECK(changes > 30);
}

TEST_CASE("synth behaviors shape the gold annotation") {
  SUBCASE("acceptance switches to the frame offered just before") {
    for (const auto& d : synthesize(only(Behavior::kSwitchAccept), 6)) {
      for (std::size_t i = 2; i < d.turns.size(); i += 2) {
        const Turn& u = d.turns[i];
        CHECK(u.acts.front().name == "switch_frame");
        CHECK(u.acts.front().args.empty());
        CHECK(d.frames[u.active_after - 1].created_at_turn == u.index - 1);
      }
    }
  }
  SUBCASE("negating an offer keeps the active frame") {
    for (const auto& d : synthesize(only(Behavior::kNegateOffer), 7)) {
      for (std::size_t i = 2; i < d.turns.size(); i += 2) {
        const Turn& u = d.turns[i];
        CHECK_FALSE(u.changes_frame());
        CHECK(u.acts.front().args.front().ref != u.active_after);
      }
    }
  }
  SUBCASE("implicit comparison references two fresh offers") {
    for (const auto& d : synthesize(only(Behavior::kCompareImplicit), 8)) {
      for (std::size_t i = 2; i < d.turns.size(); i += 2) {
        const auto& refs = d.turns[i].acts.front().refs;
        REQUIRE(refs.size() == 2);
        CHECK(d.frames[refs[0] - 1].created_at_turn == i);
        CHECK(d.frames[refs[1] - 1].created_at_turn == i);
      }
    }
  }
  SUBCASE("updates revise the active frame in place") {
    for (const auto& d : synthesize(only(Behavior::kSameUpdate), 9)) {
      for (const auto& f : d.frames) CHECK((f.id == 1 || f.creator == Author::kWizard));
      for (const auto& t : d.turns) CHECK_FALSE(t.changes_frame());
    }
  }
}

TEST_CASE("synth anaphora refers to the oldest offer") {
  // until two offers exist the generator falls back to plain requests
  const Corpus c = synthesize(only(Behavior::kSwitchAnaphora, 40), 4);
  std::size_t switches = 0;
  for (const auto& d : c) {
    FrameId first = 0;
    for (const auto& f : d.frames) {
      if (f.creator == Author::kWizard && first == 0) first = f.id;
    }
    for (const auto& t : d.turns) {
      if (!t.is_user() || t.index == 1) continue;
      if (t.acts.front().name == "request") {
        CHECK_FALSE(t.changes_frame());
        continue;
      }
      ++switches;
      CHECK(t.acts.front().name == "switch_frame");
      CHECK(t.active_after == first);
    }
  }
  CHECK(switches > 0);
}

TEST_CASE("baseline scores on a synthetic corpus") {
  SynthSpec s;
  s.dialogues = 30;
  std::size_t right = 0, total = 0;
  for (const auto& d : synthesize(s, 11)) {
    for (const auto& t : d.turns) {
      if (!t.is_user()) continue;
      const auto p = baseline_predict(d, t.index);
      const auto frames = frames_before_turn(d, t.index);
      std::size_t k = 0;
      for (const auto& act : t.acts) {
        for (const auto& a : act.args) {
          const FrameId gold = std::min<FrameId>(a.ref, static_cast<FrameId>(frames.size() + 1));
          right += p.triple_frames[k++] == gold;
          ++total;
        }
      }
    }
  }
  CHECK(total > 100);
  CHECK(right > 0);
  CHECK(right < total);
}

TEST_CASE("synth spec validation") {
  const SynthSpec def;
  CHECK_NOTHROW(def.validate());
  CHECK(SynthSpec::from_json(def.to_json()).to_json() == def.to_json());
  CHECK_THROWS_AS(SynthSpec::from_json(Json{{"mixture", {{"switch_value", 0.5}}}}), ConfigError);
  CHECK_THROWS_AS(SynthSpec::from_json(Json{{"mixture", {{"switch_value", 0.5}, {"teleport", 0.5}}}}), ConfigError);
  CHECK_THROWS_AS(SynthSpec::from_json(Json{{"mixture", {{"switch_value", 1.5}, {"same_request", -0.5}}}}),
                  ConfigError);
  CHECK_THROWS_AS(SynthSpec::from_json(Json{{"dialogue_count", 3}}), ConfigError);
  CHECK_THROWS_AS(SynthSpec::from_json(Json{{"min_user_turns", 5}, {"max_user_turns", 2}}), ConfigError);
  const auto s = SynthSpec::from_json(Json{{"dialogues", 5}, {"mixture", {{"same_request", 1.0}}}});
  CHECK(s.dialogues == 5);
  CHECK(s.weight(Behavior::kSameRequest) == 1.0);
  CHECK(s.weight(Behavior::kSwitchValue) == 0.0);
  for (Behavior b : kAllBehaviors) CHECK(parse_behavior(behavior_key(b)) == b);
  CHECK_FALSE(parse_behavior("nope").has_value());
}
