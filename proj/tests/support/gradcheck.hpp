#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "ftrack/autodiff.hpp"

namespace ftrack::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;     // worst single parameter tensor
  double global_rel_error = 0.0;  // over all parameters as one vector
  std::string worst;              // parameter with the largest error
  std::size_t checked = 0;
};

// Relative error ||a - n|| / max(||a||, ||n||) per parameter tensor, where `a`
// is the tape gradient and `n` the central finite difference of `loss`.
inline GradCheckResult grad_check(ad::ParameterSet& ps, const std::function<ad::Var(ad::Tape&)>& loss,
                                  double h = 1e-5) {
  ps.zero_grad();
  {
    ad::Tape t;
    const ad::Var l = loss(t);
    t.backward(l);
  }
  auto eval = [&] {
    ad::Tape t;
    return t.value(loss(t))[0];
  };
  GradCheckResult r;
  double all_diff2 = 0.0, all_a2 = 0.0, all_n2 = 0.0;
  for (auto& p : ps) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x = p.value[i];
      p.value[i] = x + h;
      const double up = eval();
      p.value[i] = x - h;
      const double down = eval();
      p.value[i] = x;
      const double num = (up - down) / (2 * h);
      const double ana = p.grad.size() == p.value.size() ? p.grad[i] : 0.0;
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
      ++r.checked;
    }
    all_diff2 += diff2;
    all_a2 += a2;
    all_n2 += n2;
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = p.name;
    }
  }
  r.global_rel_error = std::sqrt(all_diff2) / std::max({std::sqrt(all_a2), std::sqrt(all_n2), 1e-12});
  return r;
}

// Reduces a tensor output to a scalar with fixed pseudo-random weights.
inline ad::Var weighted_sum(ad::Tape& t, ad::Var v) {
  const std::size_t n = t.value(v).size();
  ad::Tensor w({n});
  for (std::size_t i = 0; i < n; ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return ad::sum(t, ad::mul(t, v, t.constant(ad::Tensor(t.value(v).shape(), std::vector<double>(w.data().begin(), w.data().end())))));
}

}  // namespace ftrack::testing
