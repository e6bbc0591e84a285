#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "once/param.h"

namespace once_test {

// Central-difference gradient checker. Runs in double precision only.
//
// loss_fn: full forward pass returning the scalar loss (no side effects on
// parameters). backward_fn: forward + backward, leaving gradients in each
// parameter's grad tensor (grads are zeroed here first).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param[idx]" of the worst element
  int checked = 0;
};

inline GradCheckResult grad_check(once::ParamRefsT<double>& params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<void()>& backward_fn,
                                  once::Rng& rng, int max_per_param = 8,
                                  double h = 1e-5, double denom_floor = 1e-4) {
  for (auto* p : params) p->zero_grad();
  backward_fn();

  GradCheckResult res;
  auto probe_once = [&loss_fn](double* slot, double step) {
    const double saved = *slot;
    *slot = saved + step;
    const double lp = loss_fn();
    *slot = saved - step;
    const double lm = loss_fn();
    *slot = saved;
    return (lp - lm) / (2.0 * step);
  };
  for (auto* p : params) {
    const size_t n = p->value.data.size();
    const int probes = static_cast<int>(std::min<size_t>(n, max_per_param));
    for (int t = 0; t < probes; ++t) {
      const size_t i = probes == static_cast<int>(n)
                           ? static_cast<size_t>(t)
                           : static_cast<size_t>(rng.below(n));
      double numeric = probe_once(&p->value.data[i], h);
      const double analytic = p->grad.data[i];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        once::fail("grad_check: non-finite gradient at ", p->name, "[", i, "]");
      }
      // Flooring the denominator turns the ratio into an absolute-error test
      // for near-zero gradients, which central differences cannot resolve
      // below roundoff on the loss (the torch.autograd.gradcheck atol idea).
      auto rel_err = [analytic, denom_floor](double num) {
        const double denom =
            std::max({std::abs(analytic), std::abs(num), denom_floor});
        return std::abs(analytic - num) / denom;
      };
      double rel = rel_err(numeric);
      if (rel > 1e-5) {
        // A piecewise-linear kink (ReLU) inside the probe interval biases the
        // central difference; a genuine gradient bug survives a smaller step.
        numeric = probe_once(&p->value.data[i], h / 8.0);
        rel = std::min(rel, rel_err(numeric));
      }
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace once_test
