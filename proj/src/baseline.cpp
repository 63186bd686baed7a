#include "ftrack/baseline.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack {

namespace {

bool contains(const std::vector<std::string>& names, const std::string& name) {
  return std::find(names.begin(), names.end(), name) != names.end();
}

struct Context {
  const std::vector<Frame>& frames;
  FrameId active;
  std::vector<long> last_active;  // turn of last activity per frame, -1 if never

  // Higher is more recent; ties go to the higher id.
  bool more_recent(FrameId a, FrameId b) const {
    const long ra = last_active[a - 1], rb = last_active[b - 1];
    return ra != rb ? ra > rb : a > b;
  }

  FrameId newest_wizard_frame() const {
    FrameId best = 0;
    for (const auto& f : frames) {
      if (f.creator != Author::kWizard) continue;
      if (best == 0 || f.created_at_turn > frames[best - 1].created_at_turn ||
          (f.created_at_turn == frames[best - 1].created_at_turn && f.id > best)) {
        best = f.id;
      }
    }
    return best == 0 ? active : best;
  }
};

FrameId predict_argument(const Context& ctx, const std::string& act, const SlotValue& arg, const BaselineRules& rules) {
  const auto new_frame = static_cast<FrameId>(ctx.frames.size() + 1);
  std::vector<FrameId> matches;
  if (!arg.value.empty()) {
    for (const auto& f : ctx.frames) {
      const SlotValue* v = f.current_value(arg.slot);
      if (v != nullptr && value_similarity(arg.value, v->value, rules.normalization) >= rules.threshold) {
        matches.push_back(f.id);
      }
    }
  }
  if (matches.size() == 1) return matches[0];
  if (matches.size() > 1) {
    return *std::max_element(matches.begin(), matches.end(),
                             [&](FrameId a, FrameId b) { return ctx.more_recent(b, a); });
  }
  if (contains(rules.acceptance_acts, act)) return ctx.newest_wizard_frame();
  if (contains(rules.conflict_acts, act) && !arg.value.empty() && !arg.negated) {
    const SlotValue* cur = ctx.frames[ctx.active - 1].current_value(arg.slot);
    if (cur != nullptr && !cur->value.empty()) return new_frame;
  }
  return ctx.active;
}

}  // namespace

Json BaselineRules::to_json() const {
  Json j;
  j["threshold"] = threshold;
  j["edit_normalization"] = normalization == EditNormalization::kMaxLength ? "max_length" : "sum_length";
  j["acceptance_acts"] = acceptance_acts;
  j["conflict_acts"] = conflict_acts;
  j["compare_act"] = compare_act;
  return j;
}

BaselineRules BaselineRules::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("baseline config must be an object");
  BaselineRules r;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "threshold") r.threshold = v.get<double>();
      else if (key == "acceptance_acts") r.acceptance_acts = v.get<std::vector<std::string>>();
      else if (key == "conflict_acts") r.conflict_acts = v.get<std::vector<std::string>>();
      else if (key == "compare_act") r.compare_act = v.get<std::string>();
      else if (key == "edit_normalization") {
        const auto s = v.get<std::string>();
        if (s == "max_length") r.normalization = EditNormalization::kMaxLength;
        else if (s == "sum_length") r.normalization = EditNormalization::kSumLength;
        else throw ConfigError(fmt::format("unknown edit normalization '{}'", s));
      } else {
        throw ConfigError(fmt::format("unknown baseline config key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("baseline config: {}", e.what()));
  }
  if (!(r.threshold >= 0.0 && r.threshold <= 1.0)) {
    throw ConfigError(fmt::format("baseline.threshold must lie in [0, 1], got {}", r.threshold));
  }
  return r;
}

ReferencePrediction baseline_predict(const Dialogue& d, std::size_t index, const BaselineRules& rules) {
  const Turn& turn = d.turn(index);
  const std::vector<Frame> frames = frames_before_turn(d, index);
  Context ctx{frames, turn.active_before, std::vector<long>(frames.size(), -1)};
  ctx.last_active[0] = 0;
  for (std::size_t t = 1; t < index; ++t) {
    const FrameId f = d.turn(t).active_after;
    if (f <= frames.size()) ctx.last_active[f - 1] = static_cast<long>(t);
  }

  ReferencePrediction p;
  for (const auto& act : turn.acts) {
    std::set<FrameId> refs;
    for (const auto& a : act.args) {
      const FrameId f = predict_argument(ctx, act.name, a.value, rules);
      p.triple_frames.push_back(f);
      refs.insert(f);
    }
    if (act.args.empty()) {
      if (contains(rules.acceptance_acts, act.name)) {
        refs.insert(ctx.newest_wizard_frame());
      } else if (act.name == rules.compare_act) {
        std::vector<FrameId> order;
        for (const auto& f : frames) order.push_back(f.id);
        std::sort(order.begin(), order.end(), [&](FrameId a, FrameId b) { return ctx.more_recent(a, b); });
        for (std::size_t i = 0; i < order.size() && i < 2; ++i) refs.insert(order[i]);
      } else {
        refs.insert(ctx.active);
      }
    }
    p.act_frames.emplace_back(refs.begin(), refs.end());
  }
  return p;
}

}  // namespace ftrack
