#include "ftrack/dialogue.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack {

namespace {

constexpr std::string_view kAnnotationKeys[] = {"ref", "read", "write", "id"};

struct Where {
  std::string dialogue;
  std::size_t turn = 0;

  std::string str() const {
    if (turn == 0) return fmt::format("dialogue '{}'", dialogue);
    return fmt::format("dialogue '{}' turn {}", dialogue, turn);
  }
};

const Json& require(const Json& obj, const char* key, const Where& where) {
  if (!obj.is_object()) {
    throw LoadError(fmt::format("{}: expected an object holding '{}'", where.str(), key));
  }
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw LoadError(fmt::format("{}: missing field '{}'", where.str(), key));
  }
  return *it;
}

FrameId as_frame_id(const Json& v, const char* field, const Where& where) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
    throw LoadError(fmt::format("{}: field '{}' must be a positive integer", where.str(), field));
  }
  return static_cast<FrameId>(v.get<std::int64_t>());
}

// Surface form of an annotated value. Non-string values keep their JSON spelling.
std::string value_text(const Json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::vector<Frame> parse_snapshot(const Json& frames, const Where& where) {
  if (!frames.is_array()) {
    throw LoadError(fmt::format("{}: field 'labels.frames' must be an array", where.str()));
  }
  std::vector<Frame> out;
  for (const auto& fj : frames) {
    Frame f;
    f.id = as_frame_id(require(fj, "frame_id", where), "frame_id", where);
    auto info = fj.find("info");
    if (info != fj.end()) {
      if (!info->is_object()) {
        throw LoadError(fmt::format("{}: frame {} field 'info' must be an object", where.str(), f.id));
      }
      for (const auto& [slot, values] : info->items()) {
        Constraint c{slot, {}};
        if (!values.is_array()) {
          throw LoadError(fmt::format("{}: frame {} slot '{}' must hold an array", where.str(), f.id, slot));
        }
        for (const auto& vj : values) {
          SlotValue sv{slot, value_text(vj.value("val", Json())), false};
          auto neg = vj.find("negated");
          if (neg != vj.end() && neg->is_boolean()) sv.negated = neg->get<bool>();
          c.history.push_back(std::move(sv));
        }
        f.constraints.push_back(std::move(c));
      }
    }
    out.push_back(std::move(f));
  }
  std::sort(out.begin(), out.end(), [](const Frame& a, const Frame& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].id != i + 1) {
      throw ValidationError(
          fmt::format("{}: frame ids must be consecutive from 1 (found {} at position {})", where.str(),
                      out[i].id, i + 1));
    }
  }
  return out;
}

struct RefEntry {
  FrameId frame = 0;
  std::vector<std::pair<std::string, std::optional<std::string>>> annotations;
};

DialogueAct parse_act(const Json& aj, FrameId active_after, const Where& where) {
  DialogueAct act;
  const auto& name = require(aj, "name", where);
  if (!name.is_string()) throw LoadError(fmt::format("{}: act field 'name' must be a string", where.str()));
  act.name = name.get<std::string>();

  std::vector<RefEntry> ref_entries;
  std::vector<std::optional<FrameId>> arg_refs;
  if (auto args = aj.find("args"); args != aj.end()) {
    if (!args->is_array()) throw LoadError(fmt::format("{}: act '{}' field 'args' must be an array", where.str(), act.name));
    for (const auto& arg : *args) {
      const auto& key = require(arg, "key", where);
      if (!key.is_string()) throw LoadError(fmt::format("{}: act '{}' arg field 'key' must be a string", where.str(), act.name));
      const std::string k = key.get<std::string>();
      if (k == "ref") {
        const Json& val = arg.value("val", Json::array());
        if (!val.is_array()) continue;
        for (const auto& rj : val) {
          RefEntry e;
          e.frame = as_frame_id(require(rj, "frame", where), "ref.frame", where);
          if (auto ann = rj.find("annotations"); ann != rj.end() && ann->is_array()) {
            for (const auto& a : *ann) {
              std::optional<std::string> v;
              if (a.contains("val")) v = value_text(a["val"]);
              e.annotations.emplace_back(a.value("key", std::string{}), v);
            }
          }
          ref_entries.push_back(std::move(e));
        }
        continue;
      }
      if (is_annotation_key(k)) continue;
      ActArg a;
      a.value.slot = k;
      a.value.value = value_text(arg.value("val", Json()));
      if (auto neg = arg.find("negated"); neg != arg.end() && neg->is_boolean()) a.value.negated = neg->get<bool>();
      std::optional<FrameId> explicit_ref;
      if (auto fr = arg.find("frame"); fr != arg.end()) explicit_ref = as_frame_id(*fr, "args.frame", where);
      act.args.push_back(std::move(a));
      arg_refs.push_back(explicit_ref);
    }
  }

  // Per-argument gold: explicit field, then a matching ref annotation, then a
  // bare ref entry, then the frame that is active once the turn is over.
  std::optional<FrameId> bare_entry;
  for (const auto& e : ref_entries) {
    if (e.annotations.empty()) {
      bare_entry = e.frame;
      break;
    }
  }
  for (std::size_t i = 0; i < act.args.size(); ++i) {
    auto& a = act.args[i];
    if (arg_refs[i]) {
      a.ref = *arg_refs[i];
      continue;
    }
    std::optional<FrameId> found;
    for (const auto& e : ref_entries) {
      for (const auto& [k, v] : e.annotations) {
        if (k == a.value.slot && (!v || *v == a.value.value)) {
          found = e.frame;
          break;
        }
      }
      if (found) break;
    }
    a.ref = found ? *found : (bare_entry ? *bare_entry : active_after);
  }

  // Act-level gold: explicit list, then ref entries, then argument refs, then the active frame.
  std::set<FrameId> refs;
  if (auto fr = aj.find("frames"); fr != aj.end()) {
    if (!fr->is_array()) throw LoadError(fmt::format("{}: act '{}' field 'frames' must be an array", where.str(), act.name));
    for (const auto& v : *fr) refs.insert(as_frame_id(v, "frames", where));
  } else if (!ref_entries.empty()) {
    for (const auto& e : ref_entries) refs.insert(e.frame);
  } else if (!act.args.empty()) {
    for (const auto& a : act.args) refs.insert(a.ref);
  } else {
    refs.insert(active_after);
  }
  act.refs.assign(refs.begin(), refs.end());
  return act;
}

Dialogue parse_dialogue(const Json& dj, std::size_t position) {
  Dialogue d;
  Where where{fmt::format("#{}", position), 0};
  const auto& id = require(dj, "id", where);
  if (!id.is_string()) throw LoadError(fmt::format("{}: field 'id' must be a string", where.str()));
  d.id = id.get<std::string>();
  where.dialogue = d.id;

  const auto& turns = require(dj, "turns", where);
  if (!turns.is_array()) throw LoadError(fmt::format("{}: field 'turns' must be an array", where.str()));

  FrameId active = 1;
  std::size_t known_frames = 1;
  for (std::size_t t = 0; t < turns.size(); ++t) {
    const Json& tj = turns[t];
    where.turn = t + 1;
    Turn turn;
    turn.index = t + 1;
    const auto& author = require(tj, "author", where);
    if (author == "user") {
      turn.author = Author::kUser;
    } else if (author == "wizard") {
      turn.author = Author::kWizard;
    } else {
      throw LoadError(fmt::format("{}: field 'author' must be \"user\" or \"wizard\"", where.str()));
    }
    const auto& text = require(tj, "text", where);
    if (!text.is_string()) throw LoadError(fmt::format("{}: field 'text' must be a string", where.str()));
    turn.text = text.get<std::string>();

    const auto& labels = require(tj, "labels", where);
    turn.active_before = active;
    turn.active_after = as_frame_id(require(labels, "active_frame", where), "labels.active_frame", where);
    turn.frames_after = parse_snapshot(require(labels, "frames", where), where);
    if (turn.frames_after.size() < known_frames) {
      throw ValidationError(fmt::format("{}: frame snapshot lost frames ({} < {})", where.str(),
                                        turn.frames_after.size(), known_frames));
    }
    known_frames = turn.frames_after.size();
    if (turn.active_after > known_frames) {
      throw ValidationError(fmt::format("{}: active frame {} does not exist", where.str(), turn.active_after));
    }

    const auto& acts = require(labels, "acts", where);
    if (!acts.is_array()) throw LoadError(fmt::format("{}: field 'labels.acts' must be an array", where.str()));
    for (const auto& aj : acts) turn.acts.push_back(parse_act(aj, turn.active_after, where));
    for (const auto& act : turn.acts) {
      auto dangling = [&](FrameId f) {
        return ValidationError(
            fmt::format("{}: act '{}' references frame {} which does not exist", where.str(), act.name, f));
      };
      for (const auto& a : act.args) {
        if (a.ref > known_frames) throw dangling(a.ref);
      }
      for (FrameId f : act.refs) {
        if (f > known_frames) throw dangling(f);
      }
    }
    active = turn.active_after;
    d.turns.push_back(std::move(turn));
  }

  d.frames = reconstruct_frames(d);
  // Annotate snapshots with creation metadata.
  for (auto& turn : d.turns) {
    for (auto& f : turn.frames_after) {
      f.created_at_turn = d.frames[f.id - 1].created_at_turn;
      f.creator = d.frames[f.id - 1].creator;
    }
  }

  if (auto stored = dj.find("frames"); stored != dj.end()) {
    where.turn = 0;
    if (!stored->is_array() || stored->size() != d.frames.size()) {
      throw ValidationError(fmt::format("{}: stored frame list does not match the replayed turns", where.str()));
    }
    for (std::size_t i = 0; i < stored->size(); ++i) {
      const Json& fj = (*stored)[i];
      const Frame& f = d.frames[i];
      const bool same = fj.value("frame_id", 0) == static_cast<int>(f.id) &&
                        fj.value("created_at_turn", -1) == static_cast<int>(f.created_at_turn) &&
                        fj.value("creator", std::string{}) == to_string(f.creator);
      if (!same) {
        throw ValidationError(
            fmt::format("{}: stored frame {} disagrees with the replayed turns", where.str(), i + 1));
      }
    }
  }
  return d;
}

}  // namespace

std::string_view to_string(Author a) { return a == Author::kUser ? "user" : "wizard"; }

bool is_annotation_key(std::string_view key) {
  return std::find(std::begin(kAnnotationKeys), std::end(kAnnotationKeys), key) != std::end(kAnnotationKeys);
}

const SlotValue* Frame::current_value(std::string_view slot) const {
  for (const auto& c : constraints) {
    if (c.slot != slot) continue;
    for (auto it = c.history.rbegin(); it != c.history.rend(); ++it) {
      if (!it->negated) return &*it;
    }
    return nullptr;
  }
  return nullptr;
}

const Turn& Dialogue::turn(std::size_t index) const {
  if (index < 1 || index > turns.size()) {
    throw std::out_of_range(fmt::format("dialogue '{}': turn {} out of range [1, {}]", id, index, turns.size()));
  }
  return turns[index - 1];
}

Corpus parse_corpus(const Json& doc) {
  if (!doc.is_array()) throw LoadError("corpus: top-level value must be an array of dialogues");
  Corpus corpus;
  corpus.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) corpus.push_back(parse_dialogue(doc[i], i));
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("cannot open corpus file '{}'", path.string()));
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw LoadError(fmt::format("corpus file '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return parse_corpus(doc);
}

Json corpus_to_json(const Corpus& corpus) {
  Json doc = Json::array();
  for (const auto& d : corpus) {
    Json dj;
    dj["id"] = d.id;
    Json turns = Json::array();
    for (const auto& t : d.turns) {
      Json acts = Json::array();
      for (const auto& act : t.acts) {
        Json args = Json::array();
        for (const auto& a : act.args) {
          Json aj;
          aj["key"] = a.value.slot;
          if (!a.value.value.empty()) aj["val"] = a.value.value;
          if (a.value.negated) aj["negated"] = true;
          aj["frame"] = a.ref;
          args.push_back(std::move(aj));
        }
        acts.push_back(Json{{"name", act.name}, {"args", std::move(args)}, {"frames", act.refs}});
      }
      Json frames = Json::array();
      for (const auto& f : t.frames_after) {
        Json info = Json::object();
        for (const auto& c : f.constraints) {
          Json hist = Json::array();
          for (const auto& sv : c.history) hist.push_back(Json{{"val", sv.value}, {"negated", sv.negated}});
          info[c.slot] = std::move(hist);
        }
        frames.push_back(Json{{"frame_id", f.id}, {"info", std::move(info)}});
      }
      Json labels;
      labels["acts"] = std::move(acts);
      labels["active_frame"] = t.active_after;
      labels["frames"] = std::move(frames);
      turns.push_back(Json{{"author", to_string(t.author)}, {"text", t.text}, {"labels", std::move(labels)}});
    }
    dj["turns"] = std::move(turns);
    Json frames = Json::array();
    for (const auto& f : d.frames) {
      frames.push_back(
          Json{{"frame_id", f.id}, {"creator", to_string(f.creator)}, {"created_at_turn", f.created_at_turn}});
    }
    dj["frames"] = std::move(frames);
    doc.push_back(std::move(dj));
  }
  return doc;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write corpus file '{}'", path.string()));
  out << corpus_to_json(corpus).dump(1) << '\n';
}

std::vector<Frame> reconstruct_frames(const Dialogue& d) {
  std::vector<Frame> frames;
  frames.push_back(Frame{1, {}, 0, Author::kUser});
  for (const auto& t : d.turns) {
    for (std::size_t i = frames.size(); i < t.frames_after.size(); ++i) {
      frames.push_back(Frame{static_cast<FrameId>(i + 1), {}, t.index, t.author});
    }
  }
  if (!d.turns.empty()) {
    const auto& last = d.turns.back().frames_after;
    for (std::size_t i = 0; i < last.size() && i < frames.size(); ++i) frames[i].constraints = last[i].constraints;
  }
  return frames;
}

std::vector<Frame> frames_before_turn(const Dialogue& d, std::size_t index) {
  if (index < 1 || index > d.turns.size()) {
    throw std::out_of_range(fmt::format("dialogue '{}': turn {} out of range [1, {}]", d.id, index, d.turns.size()));
  }
  if (index == 1) return {Frame{1, {}, 0, Author::kUser}};
  return d.turns[index - 2].frames_after;
}

std::vector<FrameId> frames_created_in_turn(const Dialogue& d, std::size_t index) {
  std::vector<FrameId> out;
  for (const auto& f : d.frames) {
    if (f.created_at_turn == index) out.push_back(f.id);
  }
  return out;
}

StatsReport corpus_stats(const Corpus& corpus) {
  StatsReport s;
  s.dialogues = corpus.size();
  std::size_t unchanged = 0;
  for (const auto& d : corpus) {
    s.frames += d.frames.size();
    for (const auto& t : d.turns) {
      ++s.total_turns;
      if (!t.is_user()) {
        ++s.wizard_turns;
        continue;
      }
      ++s.user_turns;
      bool has_switch = false;
      for (const auto& act : t.acts) {
        if (act.name == "switch_frame") {
          has_switch = true;
          ++s.switch_frame_acts;
        }
      }
      if (has_switch) ++s.switch_frame_turns;
      if (t.changes_frame()) {
        ++s.frame_change_turns;
        if (d.frames[t.active_after - 1].created_at_turn == t.index) ++s.new_frame_turns;
        continue;
      }
      ++unchanged;
      bool off = false;
      for (const auto& act : t.acts) {
        for (FrameId f : act.refs) off = off || f != t.active_after;
        for (const auto& a : act.args) off = off || a.ref != t.active_after;
      }
      if (off) ++s.off_active_reference_turns;
    }
  }
  if (s.user_turns > 0) s.frame_change_rate = static_cast<double>(s.frame_change_turns) / s.user_turns;
  if (unchanged > 0) s.off_active_reference_rate = static_cast<double>(s.off_active_reference_turns) / unchanged;
  return s;
}

Json to_json(const StatsReport& s) {
  Json j;
  j["dialogues"] = s.dialogues;
  j["total_turns"] = s.total_turns;
  j["user_turns"] = s.user_turns;
  j["wizard_turns"] = s.wizard_turns;
  j["frames"] = s.frames;
  j["frame_change_turns"] = s.frame_change_turns;
  j["frame_change_rate"] = s.frame_change_rate;
  j["new_frame_turns"] = s.new_frame_turns;
  j["switch_frame_turns"] = s.switch_frame_turns;
  j["switch_frame_acts"] = s.switch_frame_acts;
  j["off_active_reference_turns"] = s.off_active_reference_turns;
  j["off_active_reference_rate"] = s.off_active_reference_rate;
  return j;
}

std::string format_table(const StatsReport& s) {
  std::ostringstream out;
  auto row = [&](std::string_view name, const std::string& value) { out << fmt::format("{:<28}{:>12}\n", name, value); };
  row("dialogues", std::to_string(s.dialogues));
  row("total turns", std::to_string(s.total_turns));
  row("user turns", std::to_string(s.user_turns));
  row("wizard turns", std::to_string(s.wizard_turns));
  row("frames", std::to_string(s.frames));
  row("frame-change turns", std::to_string(s.frame_change_turns));
  row("frame-change rate", fmt::format("{:.1f}%", 100.0 * s.frame_change_rate));
  row("new-frame turns", std::to_string(s.new_frame_turns));
  row("switch_frame turns", std::to_string(s.switch_frame_turns));
  row("switch_frame acts", std::to_string(s.switch_frame_acts));
  row("off-active reference turns", std::to_string(s.off_active_reference_turns));
  row("off-active reference rate", fmt::format("{:.1f}%", 100.0 * s.off_active_reference_rate));
  return out.str();
}

}  // namespace ftrack
