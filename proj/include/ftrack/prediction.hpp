#pragma once

#include <vector>

#include "ftrack/encoding.hpp"

namespace ftrack {

// Frame references for one user turn. Frame ids are 1-based; the candidate
// new frame is frame_count() + 1.
struct ReferencePrediction {
  std::vector<FrameId> triple_frames;
  std::vector<std::vector<double>> triple_distributions;  // over 1..|F|+1; empty for the baseline
  std::vector<std::vector<FrameId>> act_frames;            // sorted, unique
  std::vector<std::vector<double>> act_probabilities;      // p_a0, p_a1..p_a|F|, p_new; empty for the baseline

  bool operator==(const ReferencePrediction&) const = default;
};

// Gold references with every frame created in the turn collapsed onto the new-frame id.
std::vector<FrameId> gold_triple_frames(const EncodedTurn& t);
std::vector<std::vector<FrameId>> gold_act_frames(const EncodedTurn& t);

Json prediction_to_json(const EncodedTurn& t, const ReferencePrediction& p);

}  // namespace ftrack
