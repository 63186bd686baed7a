#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "ftrack/dialogue.hpp"
#include "ftrack/error.hpp"

using namespace ftrack;

namespace {

std::filesystem::path data(const char* name) { return std::filesystem::path(FTRACK_TEST_DATA) / name; }

Json fixture_json(const char* name) {
  std::ifstream is(data(name));
  return Json::parse(is);
}

std::string load_error(const Json& doc) {
  try {
    parse_corpus(doc);
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("load the two-turn fixture") {
  const Corpus c = load_corpus(data("two_turn.json"));
  REQUIRE(c.size() == 1);
  CHECK(c[0].id == "fixture-two-turn");
  CHECK(c[0].turns.size() == 2);
  CHECK(c[0].frames.size() == 1);
  const auto& act = c[0].turns[0].acts.at(0);
  CHECK(act.name == "inform");
  REQUIRE(act.args.size() == 2);
  CHECK(act.args[0].value == SlotValue{"dst_city", "Rome", false});
  CHECK(act.args[0].ref == 1);
  CHECK(c[0].turns[1].acts[0].args[0].value.value.empty());
}

TEST_CASE("empty corpus") { CHECK(load_corpus(data("empty.json")).empty()); }

TEST_CASE("load errors name the dialogue and field") {
  Json doc = fixture_json("two_turn.json");
  doc[0]["turns"][1].erase("text");
  const std::string msg = load_error(doc);
  CHECK(msg.find("fixture-two-turn") != std::string::npos);
  CHECK(msg.find("'text'") != std::string::npos);
  CHECK_THROWS_AS(parse_corpus(doc), LoadError);

  CHECK_THROWS_AS(load_corpus(data("does_not_exist.json")), LoadError);
  CHECK_THROWS_AS(parse_corpus(Json::object()), LoadError);
}

TEST_CASE("dangling references are rejected") {
  Json doc = fixture_json("two_turn.json");
  doc[0]["turns"][0]["labels"]["acts"][0]["args"][0]["frame"] = 4;
  CHECK_THROWS_AS(parse_corpus(doc), ValidationError);

  Json lost = fixture_json("wizard_offers.json");
  lost[0]["turns"][2]["labels"]["frames"].erase(2);
  CHECK_THROWS_AS(parse_corpus(lost), ValidationError);

  Json stored = fixture_json("wizard_offers.json");
  stored[0]["frames"][2]["created_at_turn"] = 1;
  CHECK_THROWS_AS(parse_corpus(stored), ValidationError);
}

TEST_CASE("gold references from ref annotations") {
  const Dialogue d = load_corpus(data("wizard_offers.json")).at(0);
  const Turn& t3 = d.turn(3);
  REQUIRE(t3.acts.size() == 2);
  CHECK(t3.acts[0].name == "switch_frame");
  REQUIRE(t3.acts[0].args.size() == 1);  // the ref entry is annotation, not an argument
  CHECK(t3.acts[0].args[0].ref == 3);
  CHECK(t3.acts[0].refs == std::vector<FrameId>{3});
  CHECK(t3.acts[1].args[0].ref == 3);  // falls back to the frame active after the turn
  CHECK(t3.active_before == 1);
  CHECK(t3.active_after == 3);
  CHECK(d.turn(2).acts[0].refs == std::vector<FrameId>{2});
}

TEST_CASE("frames_before_turn") {
  const Dialogue two = load_corpus(data("two_turn.json")).at(0);
  CHECK(frames_before_turn(two, 1).size() == 1);
  CHECK_THROWS_AS(frames_before_turn(two, 3), std::out_of_range);
  CHECK_THROWS_AS(frames_before_turn(two, 0), std::out_of_range);

  const Dialogue d = load_corpus(data("wizard_offers.json")).at(0);
  CHECK(frames_before_turn(d, 3).size() == 3);
  const std::size_t last = d.turns.size();
  CHECK(frames_before_turn(d, last).size() == d.frames.size() - frames_created_in_turn(d, last).size());
  CHECK(frames_created_in_turn(d, 2) == std::vector<FrameId>{2, 3});

  // Each result is an id-prefix of the next one.
  for (std::size_t t = 1; t < last; ++t) {
    const auto a = frames_before_turn(d, t);
    const auto b = frames_before_turn(d, t + 1);
    REQUIRE(a.size() <= b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
  }
  const auto before3 = frames_before_turn(d, 3);
  CHECK(before3[1].creator == Author::kWizard);
  CHECK(before3[1].created_at_turn == 2);
  REQUIRE(before3[2].current_value("dst_city") != nullptr);
  CHECK(before3[2].current_value("dst_city")->value == "Paris");
}

TEST_CASE("reconstruction reproduces the stored frame list") {
  const Dialogue d = load_corpus(data("wizard_offers.json")).at(0);
  const auto frames = reconstruct_frames(d);
  REQUIRE(frames.size() == 3);
  CHECK(frames[0].created_at_turn == 0);
  CHECK(frames[0].creator == Author::kUser);
  CHECK(frames[2].created_at_turn == 2);
  CHECK(frames[2].creator == Author::kWizard);
  CHECK(frames == d.frames);
}

TEST_CASE("load, serialize, load is the identity") {
  for (const char* name : {"two_turn.json", "wizard_offers.json", "predict_single.json"}) {
    CAPTURE(name);
    const Corpus a = load_corpus(data(name));
    const Corpus b = parse_corpus(corpus_to_json(a));
    CHECK(a == b);
    CHECK(corpus_to_json(b) == corpus_to_json(a));
  }
}

TEST_CASE("negated values and non-string values") {
  Json doc = fixture_json("two_turn.json");
  auto& args = doc[0]["turns"][0]["labels"]["acts"][0]["args"];
  args.push_back(Json{{"key", "flex"}, {"val", true}});
  args.push_back(Json{{"key", "budget"}, {"val", 1700}, {"negated", true}});
  const Corpus c = parse_corpus(doc);
  const auto& a = c[0].turns[0].acts[0].args;
  CHECK(a[2].value.value == "true");
  CHECK(a[3].value.value == "1700");
  CHECK(a[3].value.negated);
  CHECK(parse_corpus(corpus_to_json(c)) == c);
}

TEST_CASE("corpus stats") {
  SUBCASE("two-turn fixture") {
    const auto s = corpus_stats(load_corpus(data("two_turn.json")));
    CHECK(s.dialogues == 1);
    CHECK(s.total_turns == 2);
    CHECK(s.user_turns == 1);
    CHECK(s.wizard_turns == 1);
    CHECK(s.frame_change_turns == 0);
    CHECK(s.frame_change_rate == 0.0);
  }
  SUBCASE("offer fixture, hand counted") {
    const auto s = corpus_stats(load_corpus(data("wizard_offers.json")));
    CHECK(s.total_turns == 3);
    CHECK(s.user_turns == 2);
    CHECK(s.frames == 3);
    CHECK(s.frame_change_turns == 1);
    CHECK(s.frame_change_rate == 0.5);
    CHECK(s.new_frame_turns == 0);
    CHECK(s.switch_frame_turns == 1);
    CHECK(s.switch_frame_acts == 1);
    const Json j = to_json(s);
    CHECK(j["user_turns"] == 2);
    CHECK(format_table(s).find("user turns") != std::string::npos);
  }
}
