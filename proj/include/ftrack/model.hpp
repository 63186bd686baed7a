#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ftrack/autodiff.hpp"
#include "ftrack/encoding.hpp"
#include "ftrack/layers.hpp"
#include "ftrack/prediction.hpp"

namespace ftrack {

enum class Redistribution {
  kConserving,  // column-0 mass is moved, rows keep summing to one
  kDisplayed,   // literal per-frame update; does not conserve mass
};

struct ModelConfig {
  std::size_t trigram_embed_dim = 64;
  std::size_t act_embed_dim = 64;
  std::size_t slot_embed_dim = 64;
  std::size_t gru_hidden = 128;         // r_t, per direction
  std::size_t triple_gru_hidden = 128;  // r_asv, per direction
  std::size_t frame_gru_hidden = 128;   // r_F, per direction
  std::size_t summary_dim = 256;
  std::size_t gate_hidden = 128;
  std::size_t act_head_hidden = 128;
  ad::Activation hidden_activation = ad::Activation::kTanh;
  bool act_head_onehots = true;   // feed f_c and f_n to the act head
  bool act_head_evidence = true;  // feed slot-based evidence to the act head
  Redistribution redistribution = Redistribution::kConserving;
  EncodingConfig encoding;
  std::uint64_t seed = 1;

  void validate() const;
  Json to_json() const;
  static ModelConfig from_json(const Json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Plain values of one forward pass. Frame columns of p_asv are
// [0 = active-frame alias, 1..|F|, |F|+1 = new frame].
struct ForwardOutput {
  std::size_t frame_count = 0;
  std::vector<std::vector<double>> m_asv;  // N x D
  std::vector<std::vector<double>> m_F;    // |F| x D
  std::vector<double> S_M;                 // N x |F|, row-major
  std::vector<double> S;                   // N x |F|, row-major
  std::vector<double> g_c, g_n;            // per triple
  std::vector<std::vector<double>> p_asv;  // N x (|F|+2)
  std::vector<std::vector<double>> p_aF;   // acts x (|F|+2): p_a0, p_a1..p_a|F|, p_new
};

// Graph handles of a forward pass recorded on a tape.
struct ForwardVars {
  std::vector<ad::Var> triple_logits;  // each |F|+2
  std::vector<ad::Var> act_logits;     // each |F|+1, candidates 1..|F|+1
};

struct TripleTarget {
  std::size_t column = 0;
  bool penalize_active = false;
  std::size_t active_column = 0;  // pooled with column 0 when not penalized

  std::vector<std::size_t> pooled() const;
  bool operator==(const TripleTarget&) const = default;
};

struct Targets {
  std::vector<TripleTarget> triples;
  std::vector<std::vector<double>> act_labels;  // per act, over candidates 1..|F|+1
};

Targets build_targets(const EncodedTurn& turn);

// Loss terms on plain probabilities, used to reason about the masking rule.
double triple_loss(std::span<const double> probs, const TripleTarget& tgt);

struct SwitchInfo {
  bool present = false;               // g_s
  std::vector<double> distribution;  // p_switch over frames 1..|F|
};

// Moves each row's column-0 mass onto frames. Input rows span |F|+2 columns,
// output rows |F|+1 (frames then new).
std::vector<std::vector<double>> redistribute(const std::vector<std::vector<double>>& p_asv, FrameId previous_active,
                                              const SwitchInfo& sw, Redistribution mode = Redistribution::kConserving);

// Switch information for a turn given its forward output.
SwitchInfo switch_info(const EncodedTurn& turn, const ForwardOutput& out);

class FrameTracker {
 public:
  FrameTracker(ModelConfig cfg, std::size_t trigram_count, std::size_t slot_count, std::size_t act_count);
  FrameTracker(ModelConfig cfg, const Dictionaries& dict)
      : FrameTracker(std::move(cfg), dict.trigram_count(), dict.slot_count(), dict.act_count()) {}
  // Layers point into params_, whose elements keep their addresses when moved.
  FrameTracker(const FrameTracker&) = delete;
  FrameTracker& operator=(const FrameTracker&) = delete;
  FrameTracker(FrameTracker&&) = default;
  FrameTracker& operator=(FrameTracker&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  // Records the forward pass on `t`.
  ForwardOutput forward(ad::Tape& t, const EncodedTurn& turn, ForwardVars* vars = nullptr);
  ForwardOutput forward(const EncodedTurn& turn);

  // Summed masked cross-entropy plus act-head binary cross-entropy.
  ad::Var loss(ad::Tape& t, const ForwardVars& vars, const Targets& tgt) const;

  ReferencePrediction predict(const EncodedTurn& turn);
  ReferencePrediction predict(const EncodedTurn& turn, const ForwardOutput& out) const;

  void save(const std::filesystem::path& path, const std::string& dictionary_hash) const;
  // Throws CheckpointMismatch when the checkpoint was trained with other dictionaries.
  static FrameTracker load(const std::filesystem::path& path, const Dictionaries& dict);
  static std::string checkpoint_dictionary_hash(const std::filesystem::path& path);

 private:
  std::size_t act_feature_count() const;

  ModelConfig cfg_;
  ad::ParameterSet params_;
  ad::Parameter* trigram_emb_ = nullptr;
  ad::Parameter* slot_emb_ = nullptr;
  ad::Parameter* act_emb_ = nullptr;
  ad::BiGruLayer r_t_, r_asv_, r_F_;
  ad::DenseLayer proj_asv_, proj_F_;
  ad::Parameter* w_M_ = nullptr;
  ad::Parameter* w_L_ = nullptr;
  ad::Parameter* fuse_b_ = nullptr;
  ad::DenseLayer gate1_, gate2_;
  ad::DenseLayer act_shared_, act_out_;
  ad::Parameter* act_frame_w_ = nullptr;
};

}  // namespace ftrack
