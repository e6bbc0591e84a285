#pragma once

#include <cmath>
#include <unordered_map>

#include "once/param.h"

namespace once {

// Adam with two learning-rate groups: freshly initialized parameters train at
// lr_fresh, parameters carried over from a pretrained encoder at
// lr_pretrained. Frozen parameters are never stepped and keep zero state.
template <class S>
class AdamT {
 public:
  AdamT(double lr_pretrained, double lr_fresh, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_pretrained_(lr_pretrained),
        lr_fresh_(lr_fresh),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {}

  void step(ParamRefsT<S>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto* p : params) {
      if (p->frozen) continue;
      const double lr = p->group == ParamGroup::pretrained ? lr_pretrained_ : lr_fresh_;
      State& st = state_[p];
      if (st.m.size() != p->value.data.size()) {
        st.m.assign(p->value.data.size(), 0.0);
        st.v.assign(p->value.data.size(), 0.0);
      }
      for (size_t i = 0; i < p->value.data.size(); ++i) {
        const double g = static_cast<double>(p->grad.data[i]);
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p->value.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
      p->zero_grad();
    }
  }

  int64_t steps() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  double lr_pretrained_, lr_fresh_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<ParameterT<S>*, State> state_;
};

}  // namespace once
