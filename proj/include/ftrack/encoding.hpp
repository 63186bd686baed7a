#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ftrack/dialogue.hpp"

namespace ftrack {

// Dictionary index. 0 is the reserved unknown entry; kMasked marks an input
// removed by a lesion and embeds to the zero vector.
using Index = std::int32_t;
inline constexpr Index kUnknown = 0;
inline constexpr Index kMasked = -1;

// ---------------------------------------------------------------------------
// Text

// Lowercases, splits on whitespace and detaches leading/trailing punctuation
// into single-character tokens. Emoticons such as ":)" and tokens with inner
// punctuation ("1,700", "don't") stay whole.
std::vector<std::string> tokenize(std::string_view text);

// Boundary-padded letter trigrams: "ny" -> {"#ny", "ny#"}. One per byte of the token.
std::vector<std::string> letter_trigrams(std::string_view token);

// ---------------------------------------------------------------------------
// String similarity

std::size_t levenshtein(std::string_view a, std::string_view b);

enum class EditNormalization { kMaxLength, kSumLength };

// 1 - distance/normalizer on lowercased strings; 0 when either side is empty.
double value_similarity(std::string_view a, std::string_view b,
                        EditNormalization norm = EditNormalization::kMaxLength);

// ---------------------------------------------------------------------------
// Dictionaries

class Dictionaries {
 public:
  static constexpr int kVersion = 1;

  Dictionaries() = default;

  // Built from the given dialogues; trigrams ranked by frequency, capped at `trigram_cap`.
  static Dictionaries build(std::span<const Dialogue* const> dialogues, std::size_t trigram_cap);

  Index trigram(std::string_view t) const { return lookup(trigram_index_, t); }
  Index slot(std::string_view s) const { return lookup(slot_index_, s); }
  Index act(std::string_view a) const { return lookup(act_index_, a); }

  // Sizes include the unknown entry.
  std::size_t trigram_count() const { return trigrams_.size() + 1; }
  std::size_t slot_count() const { return slots_.size() + 1; }
  std::size_t act_count() const { return acts_.size() + 1; }

  const std::vector<std::string>& trigrams() const { return trigrams_; }
  const std::vector<std::string>& slots() const { return slots_; }
  const std::vector<std::string>& acts() const { return acts_; }

  Json to_json() const;
  static Dictionaries from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static Dictionaries load(const std::filesystem::path& path);

  // Stable content hash (hex), recorded in checkpoints.
  std::string hash() const;

  bool operator==(const Dictionaries& o) const {
    return trigrams_ == o.trigrams_ && slots_ == o.slots_ && acts_ == o.acts_;
  }

 private:
  using Map = std::unordered_map<std::string, Index>;
  static Index lookup(const Map& m, std::string_view key);
  void reindex();

  std::vector<std::string> trigrams_, slots_, acts_;
  Map trigram_index_, slot_index_, act_index_;
};

std::string fnv1a_hex(std::string_view bytes);

// ---------------------------------------------------------------------------
// Encoded inputs

using TokenTrigrams = std::vector<Index>;
using TokenSeq = std::vector<TokenTrigrams>;

TokenSeq encode_text(std::string_view text, const Dictionaries& dict);

struct EncodedPair {
  Index slot = kUnknown;
  TokenSeq value;
};

// One entry per slot holding the slot's most recent non-negated value.
std::vector<EncodedPair> encode_frame(const Frame& f, const Dictionaries& dict);

// Row-major N x |frames| matrix of value similarities against each frame's
// current value for the same slot.
std::vector<double> similarity_matrix(std::span<const SlotValue> triples, std::span<const Frame> frames,
                                      EditNormalization norm = EditNormalization::kMaxLength);

struct RecencyVectors {
  std::vector<double> active;   // h_c: recently active
  std::vector<double> created;  // h_d: recently created
};

// Recency of every frame of `d` at turn `index` (0 = dialogue start).
RecencyVectors recency_vectors(const Dialogue& d, std::size_t index, double gamma);

struct FrameOnehots {
  std::vector<double> active;     // f_c, |frames|+1 entries
  std::vector<double> new_frame;  // f_n, |frames|+1 entries
};

FrameOnehots frame_onehots(std::size_t frame_count, FrameId active);

// Inputs that a lesion study can remove.
enum class Input : std::uint8_t {
  kFullActs,
  kOnlyActs,
  kFrames,
  kText,
  kRecentActive,
  kRecentCreated,
  kNewFrameOnehot,
  kStringSimilarity,
  kActiveOnehot,
};

inline constexpr std::array<Input, 9> kAllInputs = {
    Input::kFullActs,     Input::kOnlyActs,      Input::kFrames,         Input::kText,        Input::kRecentActive,
    Input::kRecentCreated, Input::kNewFrameOnehot, Input::kStringSimilarity, Input::kActiveOnehot};

std::string_view input_key(Input in);    // "full_acts", "h_c", ...
std::string_view input_label(Input in);  // "Full Acts", "h_c", ...
std::optional<Input> parse_input(std::string_view key);

class InputMask {
 public:
  InputMask() = default;
  explicit InputMask(std::initializer_list<Input> removed) {
    for (Input in : removed) remove(in);
  }
  void remove(Input in) { bits_ |= bit(in); }
  bool removed(Input in) const { return (bits_ & bit(in)) != 0; }
  bool empty() const { return bits_ == 0; }

 private:
  static std::uint16_t bit(Input in) { return static_cast<std::uint16_t>(1u << static_cast<unsigned>(in)); }
  std::uint16_t bits_ = 0;
};

struct EncodingConfig {
  double gamma = 0.9;
  std::size_t trigram_cap = 8192;
  EditNormalization normalization = EditNormalization::kMaxLength;

  bool operator==(const EncodingConfig&) const = default;
};

struct EncodedTriple {
  Index act = kUnknown;
  Index slot = kUnknown;
  TokenSeq value;
  std::size_t act_position = 0;  // owning act within the turn
};

// Everything the model sees at one user turn, plus the gold annotation.
struct EncodedTurn {
  std::string dialogue_id;
  std::size_t turn_index = 0;

  std::vector<EncodedTriple> triples;
  std::vector<SlotValue> triple_values;  // raw argument per triple
  std::vector<Index> acts;
  std::vector<std::string> act_names;
  TokenSeq utterance;
  std::vector<std::vector<EncodedPair>> frames;
  std::vector<double> similarity;  // N x |frames|, row-major
  RecencyVectors recency;
  FrameOnehots onehots;
  FrameId active = 1;  // active frame before the turn

  // Gold
  std::vector<FrameId> triple_refs;
  std::vector<std::vector<FrameId>> act_refs;
  FrameId active_after = 1;

  std::size_t frame_count() const { return frames.size(); }
  FrameId new_frame_id() const { return static_cast<FrameId>(frames.size() + 1); }
  double sim(std::size_t i, std::size_t j) const { return similarity[i * frames.size() + j]; }
};

EncodedTurn encode_turn(const Dialogue& d, std::size_t index, const Dictionaries& dict, const EncodingConfig& cfg,
                        InputMask mask = {});

// Every user turn of every dialogue, in corpus order.
std::vector<EncodedTurn> encode_user_turns(std::span<const Dialogue* const> dialogues, const Dictionaries& dict,
                                           const EncodingConfig& cfg, InputMask mask = {});

}  // namespace ftrack
