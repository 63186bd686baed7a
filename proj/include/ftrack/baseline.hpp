#pragma once

#include <string>
#include <vector>

#include "ftrack/dialogue.hpp"
#include "ftrack/encoding.hpp"
#include "ftrack/prediction.hpp"

namespace ftrack {

struct BaselineRules {
  double threshold = 0.8;  // similarity needed to call a value a match
  EditNormalization normalization = EditNormalization::kMaxLength;
  std::vector<std::string> acceptance_acts = {"switch_frame"};  // acts that accept an offer
  std::vector<std::string> conflict_acts = {"inform"};          // acts whose conflicting value opens a frame
  std::string compare_act = "request_compare";

  Json to_json() const;
  static BaselineRules from_json(const Json& j);
};

// Deterministic rule-based references for user turn `index` of `d`. Frame ids
// follow the model's convention: the new frame is |frames before the turn| + 1.
//
// Per argument, first rule that applies:
//   1. exactly one frame has a same-slot value with similarity >= threshold -> that frame
//   2. several such frames -> the most recently active one, then the higher id
//   3. acceptance act without a match -> the most recent wizard frame, else the active frame
//   4. conflict act whose value disagrees with the active frame's value -> new frame
//   5. otherwise -> the active frame
// Acts with arguments reference the frames of their arguments; bare acceptance
// acts follow rule 3, bare comparisons the two most recently active frames, and
// any other bare act the active frame.
ReferencePrediction baseline_predict(const Dialogue& d, std::size_t index, const BaselineRules& rules = {});

}  // namespace ftrack
