#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ftrack {

using Json = nlohmann::ordered_json;

// 1-based frame index within a dialogue.
using FrameId = std::uint32_t;

enum class Author { kUser, kWizard };

std::string_view to_string(Author a);

struct SlotValue {
  std::string slot;
  std::string value;  // empty for valueless arguments such as request(end_date)
  bool negated = false;

  bool operator==(const SlotValue&) const = default;
};

// One slot of a frame with every value it has held, oldest first.
struct Constraint {
  std::string slot;
  std::vector<SlotValue> history;

  bool operator==(const Constraint&) const = default;
};

struct Frame {
  FrameId id = 0;
  std::vector<Constraint> constraints;
  std::size_t created_at_turn = 0;  // 0 is the dialogue start (seed frame)
  Author creator = Author::kUser;

  // Most recent non-negated value of `slot`, or nullptr when absent or all negated.
  const SlotValue* current_value(std::string_view slot) const;

  bool operator==(const Frame&) const = default;
};

struct ActArg {
  SlotValue value;
  FrameId ref = 0;  // gold frame referenced by this argument

  bool operator==(const ActArg&) const = default;
};

struct DialogueAct {
  std::string name;
  std::vector<ActArg> args;
  std::vector<FrameId> refs;  // gold act-level reference set, sorted and unique

  bool operator==(const DialogueAct&) const = default;
};

struct Turn {
  std::size_t index = 0;  // 1-based position in the dialogue
  Author author = Author::kUser;
  std::string text;
  std::vector<DialogueAct> acts;
  FrameId active_before = 1;
  FrameId active_after = 1;
  std::vector<Frame> frames_after;  // frame snapshot once this turn is over

  bool is_user() const { return author == Author::kUser; }
  bool changes_frame() const { return active_before != active_after; }

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::vector<Frame> frames;  // final frame list

  const Turn& turn(std::size_t index) const;

  bool operator==(const Dialogue&) const = default;
};

using Corpus = std::vector<Dialogue>;

// Argument keys that carry annotation rather than slot content.
bool is_annotation_key(std::string_view key);

Corpus parse_corpus(const Json& doc);
Corpus load_corpus(const std::filesystem::path& path);
Json corpus_to_json(const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

// Frames that exist when turn `index` begins, with constraints as of that moment.
std::vector<Frame> frames_before_turn(const Dialogue& d, std::size_t index);

// Replays the turn snapshots and derives each frame's creation turn and creator.
std::vector<Frame> reconstruct_frames(const Dialogue& d);

// Ids of the frames first appearing in the snapshot of turn `index`.
std::vector<FrameId> frames_created_in_turn(const Dialogue& d, std::size_t index);

struct StatsReport {
  std::size_t dialogues = 0;
  std::size_t total_turns = 0;
  std::size_t user_turns = 0;
  std::size_t wizard_turns = 0;
  std::size_t frames = 0;
  std::size_t frame_change_turns = 0;
  double frame_change_rate = 0.0;
  std::size_t new_frame_turns = 0;  // user turns whose active frame is created in that turn
  std::size_t switch_frame_turns = 0;
  std::size_t switch_frame_acts = 0;
  std::size_t off_active_reference_turns = 0;
  double off_active_reference_rate = 0.0;  // among user turns without a frame change
};

StatsReport corpus_stats(const Corpus& corpus);
Json to_json(const StatsReport& stats);
std::string format_table(const StatsReport& stats);

}  // namespace ftrack
