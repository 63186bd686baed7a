#include "ftrack/adam.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ftrack/error.hpp"

namespace ftrack::ad {

namespace {

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void apply(std::span<double> params, std::span<const double> grads, AdamState& s, const AdamConfig& cfg) {
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
    params[i] -= cfg.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg.eps);
  }
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient sizes differ");
  if (!all_finite(grads)) throw TrainingDiverged("adam_step: non-finite gradient");
  apply(params, grads, state, cfg);
}

Adam::Adam(ParameterSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg), state_(params.size()) {}

void Adam::step() {
  for (const auto& p : *params_) {
    if (!all_finite(p.grad.data())) throw TrainingDiverged(fmt::format("non-finite gradient in parameter '{}'", p.name));
  }
  std::size_t i = 0;
  for (auto& p : *params_) apply(p.value.data(), p.grad.data(), state_[i++], cfg_);
}

}  // namespace ftrack::ad
