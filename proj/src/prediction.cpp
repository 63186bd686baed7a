#include "ftrack/prediction.hpp"

#include <algorithm>

namespace ftrack {

namespace {

FrameId collapse(const EncodedTurn& t, FrameId id) { return std::min(id, t.new_frame_id()); }

Json frame_json(const EncodedTurn& t, FrameId id) {
  if (id == t.new_frame_id()) return "new";
  return id;
}

}  // namespace

std::vector<FrameId> gold_triple_frames(const EncodedTurn& t) {
  std::vector<FrameId> out;
  out.reserve(t.triple_refs.size());
  for (FrameId id : t.triple_refs) out.push_back(collapse(t, id));
  return out;
}

std::vector<std::vector<FrameId>> gold_act_frames(const EncodedTurn& t) {
  std::vector<std::vector<FrameId>> out;
  for (const auto& refs : t.act_refs) {
    std::vector<FrameId> s;
    for (FrameId id : refs) s.push_back(collapse(t, id));
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    out.push_back(std::move(s));
  }
  return out;
}

Json prediction_to_json(const EncodedTurn& t, const ReferencePrediction& p) {
  Json j;
  j["dialogue_id"] = t.dialogue_id;
  j["turn"] = t.turn_index;
  j["frame_count"] = t.frame_count();
  j["active_frame"] = t.active;
  Json triples = Json::array();
  for (std::size_t i = 0; i < p.triple_frames.size(); ++i) {
    const auto& act = t.act_names[t.triples[i].act_position];
    Json r;
    r["act"] = act;
    r["slot"] = t.triple_values[i].slot;
    r["value"] = t.triple_values[i].value;
    r["frame"] = frame_json(t, p.triple_frames[i]);
    if (i < p.triple_distributions.size()) r["distribution"] = p.triple_distributions[i];
    triples.push_back(std::move(r));
  }
  j["triples"] = std::move(triples);
  Json acts = Json::array();
  for (std::size_t a = 0; a < p.act_frames.size(); ++a) {
    Json r;
    r["act"] = t.act_names[a];
    Json frames = Json::array();
    for (FrameId id : p.act_frames[a]) frames.push_back(frame_json(t, id));
    r["frames"] = std::move(frames);
    if (a < p.act_probabilities.size()) r["probabilities"] = p.act_probabilities[a];
    acts.push_back(std::move(r));
  }
  j["acts"] = std::move(acts);
  return j;
}

}  // namespace ftrack
