// Central-difference gradient checking. The loss functor rebuilds its graph
// from the current parameter values on every call and must be deterministic
// per call (reset any RNG it uses internally).
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sinckws/tensor.hpp"

namespace testsupport {

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst = "no parameters";
};

template <typename Fn>
GradCheck check_gradients(Fn&& fn, const std::vector<sinckws::TensorPtr<double>>& params,
                          double eps = 1e-5) {
  for (const auto& p : params) {
    p->needs_grad = true;
    p->zero_grad();
  }
  sinckws::Tape<double> tape;
  auto loss = fn(static_cast<sinckws::Tape<double>*>(&tape));
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (const auto& p : params)
    analytic.push_back(p->grad.empty() ? std::vector<double>(p->values.size(), 0.0)
                                       : p->grad);

  GradCheck res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi]->values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double lp = fn(static_cast<sinckws::Tape<double>*>(nullptr))->values[0];
      vals[i] = saved - eps;
      const double lm = fn(static_cast<sinckws::Tape<double>*>(nullptr))->values[0];
      vals[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double ad = analytic[pi][i];
      // The denominator floor keeps the comparison meaningful for near-zero
      // gradient elements: central differences cannot resolve absolute
      // disagreements below ~1e-11 (machine epsilon over 2*eps for a
      // unit-scale loss), so elements under the floor are effectively held
      // to |ad - fd| <= 1e-10 instead of a pure relative bound.
      const double rel =
          std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                    "]: analytic=" + std::to_string(ad) + " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

}  // namespace testsupport
