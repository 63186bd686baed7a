#pragma once

#include <span>
#include <vector>

#include "ftrack/autodiff.hpp"

namespace ftrack::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
};

// One bias-corrected Adam update of `params` in place. Throws TrainingDiverged
// on a non-finite gradient, leaving params and state untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig cfg);

  // Applies the accumulated Parameter::grad of every parameter.
  void step();
  std::size_t steps() const { return state_.empty() ? 0 : state_.front().t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParameterSet* params_;
  AdamConfig cfg_;
  std::vector<AdamState> state_;
};

}  // namespace ftrack::ad
