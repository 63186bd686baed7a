#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "ftrack/dialogue.hpp"

namespace ftrack {

// User behaviors the generator can script. Gold references follow from slot
// matching, recency and offer order, so a perfect tracker is possible.
enum class Behavior : std::uint8_t {
  kSwitchValue,      // "the Paris one sounds better" -> that frame
  kSwitchAccept,     // "yes please" after an offer -> the offered frame
  kSwitchAnaphora,   // "the first trip you showed me" -> oldest offer
  kCompareImplicit,  // "do these differ?" -> both frames just offered
  kCompareExplicit,  // "compare this with the Paris one" -> active + named frame
  kNewConflict,      // "how about Tokyo instead?" -> new frame
  kNewReference,     // "is there a trip to Paris on another date?" -> new frame
  kSameNewSlot,      // adds a slot the active frame lacks -> active frame
  kSameUpdate,       // "actually, make the budget 2500" -> active frame, value revised
  kSameRequest,      // request(price) -> active frame
  kNegateOffer,      // "no, not Paris" -> the offered frame, no switch
};

inline constexpr std::array<Behavior, 11> kAllBehaviors = {
    Behavior::kSwitchValue, Behavior::kSwitchAccept, Behavior::kSwitchAnaphora, Behavior::kCompareImplicit,
    Behavior::kCompareExplicit, Behavior::kNewConflict, Behavior::kNewReference, Behavior::kSameNewSlot,
    Behavior::kSameUpdate, Behavior::kSameRequest, Behavior::kNegateOffer};

std::string_view behavior_key(Behavior b);
std::optional<Behavior> parse_behavior(std::string_view key);

struct SynthSpec {
  std::size_t dialogues = 50;
  std::size_t min_user_turns = 3;  // after the opening turn
  std::size_t max_user_turns = 6;
  double offer_rate = 0.5;      // chance of an unprompted wizard offer
  double two_offer_rate = 0.3;  // chance an offer turn presents two packages
  std::array<double, kAllBehaviors.size()> mixture{};  // weights, must sum to 1

  SynthSpec();  // default mixture over every behavior

  double weight(Behavior b) const { return mixture[static_cast<std::size_t>(b)]; }
  void set_weight(Behavior b, double w) { mixture[static_cast<std::size_t>(b)] = w; }

  void validate() const;
  Json to_json() const;
  // Missing behaviors get weight 0 when "mixture" is given.
  static SynthSpec from_json(const Json& j);
  static SynthSpec load(const std::filesystem::path& path);
};

// Same spec and seed give the same corpus.
Corpus synthesize(const SynthSpec& spec, std::uint64_t seed);

}  // namespace ftrack
