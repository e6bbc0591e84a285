#pragma once

#include <memory>
#include <string>
#include <vector>

#include "once/tensor.h"

namespace once {

// Learning-rate group a parameter belongs to. "pretrained" parameters get the
// small learning rate, "fresh" ones the large rate.
enum class ParamGroup { pretrained, fresh };

template <class S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;
  ParamGroup group = ParamGroup::fresh;
  bool frozen = false;

  ParameterT() = default;
  ParameterT(std::string name_in, TensorT<S> value_in,
             ParamGroup group_in = ParamGroup::fresh)
      : name(std::move(name_in)), value(std::move(value_in)), group(group_in) {
    grad = TensorT<S>(value.shape);
  }

  void zero_grad() { grad.zero(); }
};

// Flat list of parameter pointers a module exposes to the optimizer and the
// checkpoint writer. Pointers stay valid for the module's lifetime.
template <class S>
using ParamRefsT = std::vector<ParameterT<S>*>;

template <class S>
ParameterT<S>* find_param(ParamRefsT<S>& params, const std::string& name) {
  for (auto* p : params) {
    if (p->name == name) return p;
  }
  return nullptr;
}

}  // namespace once
