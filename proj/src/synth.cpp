#include "ftrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "ftrack/error.hpp"
#include "ftrack/rng.hpp"

namespace ftrack {

namespace {

constexpr std::array<std::string_view, kAllBehaviors.size()> kBehaviorKeys = {
    "switch_value", "switch_accept", "switch_anaphora", "compare_implicit", "compare_explicit", "new_conflict",
    "new_reference", "same_new_slot", "same_update", "same_request", "negate_offer"};

// Pairwise edit similarity stays below 0.8, so no two cities match each other.
constexpr std::array<const char*, 32> kCities = {
    "Paris",   "Tokyo",  "Berlin", "Toronto",  "Sydney",  "Madrid",   "Cairo",   "Lima",
    "Oslo",    "Dublin", "Vancouver", "Bogota", "Kyoto",  "Seattle",  "Naples",  "Havana",
    "Denver",  "Manila", "Lisbon", "Atlanta",  "Mumbai",  "Santiago", "Calgary", "Munich",
    "Recife",  "Boston", "Jakarta", "Zagreb",  "Orlando", "Helsinki", "Nairobi", "Quebec"};
constexpr std::array<const char*, 6> kMonths = {"june", "july", "august", "september", "october", "november"};

constexpr const char* kSlotWords[][2] = {{"budget", "budget"},        {"duration", "trip length"},
                                         {"category", "hotel rating"}, {"str_date", "departure date"},
                                         {"end_date", "return date"},  {"seat", "seat class"},
                                         {"price", "price"}};

std::string slot_word(const std::string& slot) {
  for (const auto& w : kSlotWords) {
    if (slot == w[0]) return w[1];
  }
  return slot;
}

double mixture_total(const SynthSpec& s) {
  double total = 0.0;
  for (double w : s.mixture) total += w;
  return total;
}

DialogueAct make_act(std::string name, std::vector<ActArg> args, std::set<FrameId> refs) {
  DialogueAct a;
  a.name = std::move(name);
  a.args = std::move(args);
  if (refs.empty()) {
    for (const auto& arg : a.args) refs.insert(arg.ref);
  }
  a.refs.assign(refs.begin(), refs.end());
  return a;
}

ActArg arg(std::string slot, std::string value, FrameId ref) { return ActArg{SlotValue{std::move(slot), std::move(value)}, ref}; }

class Generator {
 public:
  Generator(const SynthSpec& spec, std::uint64_t seed, std::size_t position)
      : spec_(spec), rng_(Rng::derive(seed, position)) {
    d_.id = fmt::format("synth-{:04d}", position);
    frames_.push_back(Frame{1, {}, 0, Author::kUser});
    last_active_.push_back(0);
  }

  Dialogue run() {
    opening();
    const std::size_t n = spec_.min_user_turns + rng_.below(spec_.max_user_turns - spec_.min_user_turns + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Behavior b = choose();
      wizard_turn(b);
      user_turn(b);
    }
    d_.frames = frames_;
    return std::move(d_);
  }

 private:
  template <std::size_t N>
  const char* pick(const std::array<const char*, N>& options) {
    return options[rng_.below(N)];
  }

  std::string fresh_city() {
    std::vector<std::string> unused;
    for (const char* c : kCities) {
      bool used = false;
      for (const auto& f : frames_) {
        for (const auto& con : f.constraints) {
          for (const auto& v : con.history) used = used || v.value == c;
        }
      }
      if (!used) unused.push_back(c);
    }
    if (unused.empty()) return kCities[rng_.below(kCities.size())];
    return unused[rng_.below(unused.size())];
  }

  std::string money() { return std::to_string(1000 + 100 * rng_.below(41)); }
  std::string date() { return fmt::format("{} {}", pick(kMonths), 1 + rng_.below(28)); }

  std::string value_for(const std::string& slot) {
    if (slot == "dst_city" || slot == "or_city") return fresh_city();
    if (slot == "budget" || slot == "price") return money();
    if (slot == "duration") return std::to_string(3 + rng_.below(12));
    if (slot == "category") return std::to_string(2 + rng_.below(4));
    if (slot == "seat") return rng_.bernoulli(0.5) ? "economy" : "business";
    return date();
  }

  // Fresh value that differs from `old`.
  std::string different_value(const std::string& slot, const std::string& old) {
    for (;;) {
      std::string v = value_for(slot);
      if (v != old) return v;
    }
  }

  Frame& frame(FrameId id) { return frames_[id - 1]; }

  static std::string current(const Frame& f, const std::string& slot) {
    const SlotValue* v = f.current_value(slot);
    return v == nullptr ? std::string{} : v->value;
  }

  static void set(Frame& f, const std::string& slot, const std::string& value) {
    for (auto& c : f.constraints) {
      if (c.slot == slot) {
        c.history.push_back(SlotValue{slot, value});
        return;
      }
    }
    f.constraints.push_back(Constraint{slot, {SlotValue{slot, value}}});
  }

  FrameId add_frame(Author creator) {
    const auto id = static_cast<FrameId>(frames_.size() + 1);
    frames_.push_back(Frame{id, {}, d_.turns.size() + 1, creator});
    last_active_.push_back(-1);
    return id;
  }

  void push_turn(Author author, std::string text, std::vector<DialogueAct> acts, FrameId active_after) {
    Turn t;
    t.index = d_.turns.size() + 1;
    t.author = author;
    t.text = std::move(text);
    t.acts = std::move(acts);
    t.active_before = active_;
    t.active_after = active_after;
    t.frames_after = frames_;
    active_ = active_after;
    last_active_[active_ - 1] = static_cast<long>(t.index);
    d_.turns.push_back(std::move(t));
  }

  bool more_recent(FrameId a, FrameId b) const {
    const long ra = last_active_[a - 1], rb = last_active_[b - 1];
    return ra != rb ? ra > rb : a > b;
  }

  // Frames a user can name by destination: not active, and preferred by
  // recency among every frame sharing that destination.
  std::vector<FrameId> nameable_frames() const {
    std::vector<FrameId> out;
    for (const auto& f : frames_) {
      if (f.id == active_) continue;
      const std::string dst = current(f, "dst_city");
      if (dst.empty()) continue;
      bool best = true;
      for (const auto& g : frames_) {
        if (g.id != f.id && current(g, "dst_city") == dst && more_recent(g.id, f.id)) best = false;
      }
      if (best) out.push_back(f.id);
    }
    return out;
  }

  std::vector<FrameId> wizard_frames() const {
    std::vector<FrameId> out;
    for (const auto& f : frames_) {
      if (f.creator == Author::kWizard) out.push_back(f.id);
    }
    return out;
  }

  // Oldest offer, when it was the only package of its turn and is not active.
  FrameId first_offer() const {
    const auto w = wizard_frames();
    if (w.size() < 2) return 0;
    const Frame& f = frames_[w[0] - 1];
    if (f.id == active_ || frames_[w[1] - 1].created_at_turn == f.created_at_turn) return 0;
    return f.id;
  }

  std::vector<std::string> missing_slots(const Frame& f) const {
    std::vector<std::string> out;
    for (const char* s : {"category", "seat", "str_date", "end_date", "duration"}) {
      if (current(f, s).empty()) out.push_back(s);
    }
    return out;
  }

  std::vector<std::string> updatable_slots(const Frame& f) const {
    std::vector<std::string> out;
    for (const char* s : {"budget", "duration", "category", "str_date"}) {
      if (!current(f, s).empty()) out.push_back(s);
    }
    return out;
  }

  bool feasible(Behavior b) const {
    switch (b) {
      case Behavior::kSwitchAnaphora:
        return first_offer() != 0;
      case Behavior::kSameNewSlot:
        return !missing_slots(frames_[active_ - 1]).empty();
      case Behavior::kSameUpdate:
        return !updatable_slots(frames_[active_ - 1]).empty();
      default:
        return true;  // anything else can be set up by the wizard turn
    }
  }

  Behavior choose() {
    std::vector<double> w(kAllBehaviors.size(), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < kAllBehaviors.size(); ++i) {
      if (spec_.mixture[i] > 0.0 && feasible(kAllBehaviors[i])) {
        w[i] = spec_.mixture[i];
        any = true;
      }
    }
    if (!any) return Behavior::kSameRequest;
    return kAllBehaviors[rng_.categorical(w)];
  }

  void opening() {
    Frame& f = frame(1);
    std::vector<ActArg> args;
    const std::string dst = fresh_city();
    set(f, "dst_city", dst);
    const std::string orig = fresh_city();
    set(f, "or_city", orig);
    const std::string budget = money();
    set(f, "budget", budget);
    args = {arg("or_city", orig, 1), arg("dst_city", dst, 1), arg("budget", budget, 1)};
    std::string text;
    switch (rng_.below(3)) {
      case 0:
        text = fmt::format("Hi! I'd like to go from {} to {}, my budget is {}.", orig, dst, budget);
        break;
      case 1:
        text = fmt::format("Hello, I am looking for a trip to {} leaving from {}. I have {} to spend.", dst, orig, budget);
        break;
      default:
        text = fmt::format("I want to travel from {} to {} with a budget of {}.", orig, dst, budget);
    }
    if (rng_.bernoulli(0.5)) {
      const std::string when = date();
      set(f, "str_date", when);
      args.push_back(arg("str_date", when, 1));
      text += fmt::format(" I would leave on {}.", when);
    }
    push_turn(Author::kUser, std::move(text), {make_act("inform", std::move(args), {})}, 1);
  }

  void wizard_turn(Behavior next) {
    std::size_t offers = 0;
    bool fresh = false;
    switch (next) {
      case Behavior::kSwitchAccept:
      case Behavior::kNegateOffer:
        offers = 1;
        fresh = true;
        break;
      case Behavior::kCompareImplicit:
        offers = 2;
        fresh = true;
        break;
      case Behavior::kSwitchValue:
      case Behavior::kCompareExplicit:
      case Behavior::kNewReference:
        if (nameable_frames().empty()) {
          offers = 1;
          fresh = true;
        }
        break;
      default:
        break;
    }
    if (offers == 0 && rng_.bernoulli(spec_.offer_rate)) offers = rng_.bernoulli(spec_.two_offer_rate) ? 2 : 1;

    last_offer_.clear();
    if (offers == 0) {
      const std::string slot = rng_.bernoulli(0.5) ? "str_date" : "duration";
      const std::string text = slot == "str_date" ? "When would you like to leave?" : "How many days would you like to stay?";
      push_turn(Author::kWizard, text, {make_act("request", {arg(slot, "", active_)}, {})}, active_);
      return;
    }
    std::vector<DialogueAct> acts;
    std::vector<std::string> parts;
    const std::string active_dst = current(frame(active_), "dst_city");
    for (std::size_t k = 0; k < offers; ++k) {
      const FrameId id = add_frame(Author::kWizard);
      Frame& f = frame(id);
      const std::string dst = (!fresh && rng_.bernoulli(0.3) && !active_dst.empty()) ? active_dst : fresh_city();
      const std::string price = money(), duration = value_for("duration"), category = value_for("category");
      set(f, "dst_city", dst);
      set(f, "price", price);
      set(f, "duration", duration);
      set(f, "category", category);
      acts.push_back(make_act("offer",
                              {arg("dst_city", dst, id), arg("price", price, id), arg("duration", duration, id),
                               arg("category", category, id)},
                              {}));
      parts.push_back(fmt::format("a {} day trip to {} at a {} star hotel for {}", duration, dst, category, price));
      last_offer_.push_back(id);
    }
    std::string text = offers == 1 ? fmt::format("I can offer {}.", parts[0])
                                   : fmt::format("I have {}, or {}.", parts[0], parts[1]);
    push_turn(Author::kWizard, std::move(text), std::move(acts), active_);
  }

  FrameId pick_nameable() {
    auto named = nameable_frames();
    std::vector<FrameId> offered;
    for (FrameId f : named) {
      if (std::find(last_offer_.begin(), last_offer_.end(), f) != last_offer_.end()) offered.push_back(f);
    }
    if (!offered.empty() && rng_.bernoulli(0.7)) named = offered;
    return named[rng_.below(named.size())];
  }

  // Valueless follow-up request, such as "what is the price?".
  std::pair<ActArg, std::string> follow_up(FrameId ref) {
    static constexpr std::array<const char*, 4> slots = {"price", "category", "end_date", "duration"};
    const std::string slot = pick(slots);
    std::string q;
    if (slot == "price") q = "How much does it cost?";
    else if (slot == "category") q = "What is the hotel rating?";
    else if (slot == "end_date") q = "When would I come back?";
    else q = "How long is the trip?";
    return {arg(slot, "", ref), q};
  }

  void user_turn(Behavior b) {
    const FrameId active = active_;
    std::vector<DialogueAct> acts;
    std::string text;
    FrameId after = active;
    switch (b) {
      case Behavior::kSwitchValue: {
        const FrameId target = pick_nameable();
        const std::string dst = current(frame(target), "dst_city");
        acts.push_back(make_act("switch_frame", {arg("dst_city", dst, target)}, {}));
        static constexpr std::array<const char*, 3> forms = {"Oh, the {} deal sounds much better!",
                                                             "Can you tell me more about the {} package?",
                                                             "Let's go back to the trip to {}."};
        text = fmt::format(fmt::runtime(pick(forms)), dst);
        if (rng_.bernoulli(0.5)) {
          auto [a, q] = follow_up(target);
          acts.push_back(make_act("request", {a}, {}));
          text += " " + q;
        }
        after = target;
        break;
      }
      case Behavior::kSwitchAccept: {
        const FrameId target = last_offer_.back();
        acts.push_back(make_act("switch_frame", {}, {target}));
        static constexpr std::array<const char*, 3> forms = {"Yes please, tell me more!", "Sounds good.",
                                                             "Reasonable, I'll take it."};
        text = pick(forms);
        if (rng_.bernoulli(0.6)) {
          auto [a, q] = follow_up(target);
          acts.push_back(make_act("request", {a}, {}));
          text += " " + q;
        }
        after = target;
        break;
      }
      case Behavior::kSwitchAnaphora: {
        const FrameId target = first_offer();
        acts.push_back(make_act("switch_frame", {}, {target}));
        auto [a, q] = follow_up(target);
        acts.push_back(make_act("request", {a}, {}));
        static constexpr std::array<const char*, 2> forms = {"Let me think about the first trip you showed me.",
                                                             "Actually, give me the first option."};
        text = fmt::format("{} {}", pick(forms), q);
        after = target;
        break;
      }
      case Behavior::kCompareImplicit: {
        acts.push_back(make_act("request_compare", {}, {last_offer_[0], last_offer_[1]}));
        static constexpr std::array<const char*, 2> forms = {"Do these packages have different departure dates?",
                                                             "Which of those two is better?"};
        text = pick(forms);
        break;
      }
      case Behavior::kCompareExplicit: {
        const FrameId other = pick_nameable();
        const std::string dst = current(frame(other), "dst_city");
        acts.push_back(make_act("request_compare", {arg("dst_city", dst, other)}, {active, other}));
        text = fmt::format("Can you compare this one with the package to {}?", dst);
        break;
      }
      case Behavior::kNewConflict: {
        const Frame& cur = frame(active);
        const bool city = current(cur, "budget").empty() || rng_.bernoulli(0.6);
        const std::string slot = city ? "dst_city" : "budget";
        const std::string value = different_value(slot, current(cur, slot));
        const FrameId id = copy_frame(active);
        set(frame(id), slot, value);
        acts.push_back(make_act("inform", {arg(slot, value, id)}, {}));
        if (city) {
          static constexpr std::array<const char*, 2> forms = {"Okay, how about {} then?", "What about going to {} instead?"};
          text = fmt::format(fmt::runtime(pick(forms)), value);
        } else {
          text = fmt::format("Hmm, what if my budget was {} instead?", value);
        }
        after = id;
        break;
      }
      case Behavior::kNewReference: {
        const FrameId base = pick_nameable();
        const std::string dst = current(frame(base), "dst_city");
        const std::string when = different_value("str_date", current(frame(base), "str_date"));
        const FrameId id = copy_frame(base);
        set(frame(id), "str_date", when);
        acts.push_back(make_act("inform", {arg("dst_city", dst, id), arg("str_date", when, id)}, {}));
        text = fmt::format("Is there another trip to {} leaving on {} instead?", dst, when);
        after = id;
        break;
      }
      case Behavior::kSameNewSlot: {
        const auto slots = missing_slots(frame(active));
        const std::string slot = slots[rng_.below(slots.size())];
        const std::string value = value_for(slot);
        set(frame(active), slot, value);
        acts.push_back(make_act("inform", {arg(slot, value, active)}, {}));
        if (slot == "category") text = fmt::format("I'd like a {} star hotel.", value);
        else if (slot == "seat") text = fmt::format("I prefer to fly {}.", value);
        else if (slot == "duration") text = fmt::format("I want to stay for {} days.", value);
        else text = fmt::format("The {} should be {}.", slot_word(slot), value);
        break;
      }
      case Behavior::kSameUpdate: {
        const auto slots = updatable_slots(frame(active));
        const std::string slot = slots[rng_.below(slots.size())];
        const std::string value = different_value(slot, current(frame(active), slot));
        set(frame(active), slot, value);
        acts.push_back(make_act("inform", {arg(slot, value, active)}, {}));
        static constexpr std::array<const char*, 2> forms = {"Actually, could you change the {} to {}?",
                                                             "Sorry, I meant {} for the {}."};
        text = rng_.bernoulli(0.5) ? fmt::format(fmt::runtime(forms[0]), slot_word(slot), value)
                                   : fmt::format(fmt::runtime(forms[1]), value, slot_word(slot));
        break;
      }
      case Behavior::kSameRequest: {
        auto [a, q] = follow_up(active);
        acts.push_back(make_act("request", {a}, {}));
        text = q;
        break;
      }
      case Behavior::kNegateOffer: {
        const FrameId target = last_offer_.front();
        const std::string dst = current(frame(target), "dst_city");
        acts.push_back(make_act("negate", {arg("dst_city", dst, target)}, {}));
        text = fmt::format("No, I don't want to go to {}.", dst);
        break;
      }
    }
    push_turn(Author::kUser, std::move(text), std::move(acts), after);
  }

  FrameId copy_frame(FrameId from) {
    std::vector<Constraint> copy;
    for (const auto& c : frame(from).constraints) {
      const SlotValue* v = frame(from).current_value(c.slot);
      if (v != nullptr && c.slot != "price") copy.push_back(Constraint{c.slot, {*v}});
    }
    const FrameId id = add_frame(Author::kUser);
    frame(id).constraints = std::move(copy);
    return id;
  }

  const SynthSpec& spec_;
  Rng rng_;
  Dialogue d_;
  std::vector<Frame> frames_;
  std::vector<long> last_active_;
  std::vector<FrameId> last_offer_;
  FrameId active_ = 1;
};

}  // namespace

std::string_view behavior_key(Behavior b) { return kBehaviorKeys[static_cast<std::size_t>(b)]; }

std::optional<Behavior> parse_behavior(std::string_view key) {
  for (std::size_t i = 0; i < kBehaviorKeys.size(); ++i) {
    if (kBehaviorKeys[i] == key) return kAllBehaviors[i];
  }
  return std::nullopt;
}

SynthSpec::SynthSpec() {
  set_weight(Behavior::kSwitchValue, 0.16);
  set_weight(Behavior::kSwitchAccept, 0.08);
  set_weight(Behavior::kSwitchAnaphora, 0.04);
  set_weight(Behavior::kCompareImplicit, 0.06);
  set_weight(Behavior::kCompareExplicit, 0.06);
  set_weight(Behavior::kNewConflict, 0.14);
  set_weight(Behavior::kNewReference, 0.06);
  set_weight(Behavior::kSameNewSlot, 0.12);
  set_weight(Behavior::kSameUpdate, 0.08);
  set_weight(Behavior::kSameRequest, 0.12);
  set_weight(Behavior::kNegateOffer, 0.08);
}

void SynthSpec::validate() const {
  if (dialogues == 0) throw ConfigError("synth.dialogues must be positive");
  if (min_user_turns > max_user_turns) throw ConfigError("synth.min_user_turns exceeds synth.max_user_turns");
  for (double p : {offer_rate, two_offer_rate}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth offer rates must lie in [0, 1]");
  }
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    if (!(mixture[i] >= 0.0) || !std::isfinite(mixture[i])) {
      throw ConfigError(fmt::format("synth weight for '{}' must be a non-negative number", kBehaviorKeys[i]));
    }
  }
  const double total = mixture_total(*this);
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("synth mixture weights must sum to 1, got {}", total));
  }
}

Json SynthSpec::to_json() const {
  Json j;
  j["dialogues"] = dialogues;
  j["min_user_turns"] = min_user_turns;
  j["max_user_turns"] = max_user_turns;
  j["offer_rate"] = offer_rate;
  j["two_offer_rate"] = two_offer_rate;
  Json m = Json::object();
  for (Behavior b : kAllBehaviors) m[std::string(behavior_key(b))] = weight(b);
  j["mixture"] = std::move(m);
  return j;
}

SynthSpec SynthSpec::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dialogues") s.dialogues = v.get<std::size_t>();
      else if (key == "min_user_turns") s.min_user_turns = v.get<std::size_t>();
      else if (key == "max_user_turns") s.max_user_turns = v.get<std::size_t>();
      else if (key == "offer_rate") s.offer_rate = v.get<double>();
      else if (key == "two_offer_rate") s.two_offer_rate = v.get<double>();
      else if (key == "mixture") {
        if (!v.is_object()) throw ConfigError("synth.mixture must be an object");
        s.mixture.fill(0.0);
        for (const auto& [name, w] : v.items()) {
          const auto b = parse_behavior(name);
          if (!b) throw ConfigError(fmt::format("unknown synth behavior '{}'", name));
          s.set_weight(*b, w.get<double>());
        }
      } else {
        throw ConfigError(fmt::format("unknown synth spec key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("synth spec: {}", e.what()));
  }
  s.validate();
  return s;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open synth spec '{}'", path.string()));
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(fmt::format("synth spec '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j);
}

Corpus synthesize(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Corpus c;
  c.reserve(spec.dialogues);
  for (std::size_t i = 0; i < spec.dialogues; ++i) c.push_back(Generator(spec, seed, i).run());
  return c;
}

}  // namespace ftrack
