#pragma once

// Exponential-moving-average teacher: a gradient-free copy of the student
// pulled toward it by p_t <- m*p_t + (1-m)*p_s after every optimizer step.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hpm/vit.hpp"

namespace hpm {

struct EmaState {
  double momentum = 0.996;
  std::uint64_t updates = 0;
};

// Gradient-free deep copy of the student's parameters. The teacher gets its
// own storage; position tables are rebuilt from the same config.
template <typename T>
HpmModel<T> init_teacher(HpmModel<T>& student) {
  Rng scratch(0);  // structural init only; every value is overwritten below
  HpmModel<T> teacher = init_model<T>(student.cfg, scratch, /*requires_grad=*/false);
  std::vector<Tensor<T>*> src;
  student.for_each_param([&](const std::string&, Tensor<T>& p) { src.push_back(&p); });
  std::size_t i = 0;
  teacher.for_each_param([&](const std::string&, Tensor<T>& p) {
    auto s = src[i++]->data();
    std::copy(s.begin(), s.end(), p.data().begin());
  });
  return teacher;
}

template <typename T>
void ema_update(HpmModel<T>& teacher, HpmModel<T>& student, EmaState& state) {
  if (state.momentum < 0.0 || state.momentum > 1.0)
    throw std::invalid_argument("ema_update: momentum outside [0,1]");
  std::vector<Tensor<T>*> src;
  student.for_each_param([&](const std::string&, Tensor<T>& p) { src.push_back(&p); });
  const T m = static_cast<T>(state.momentum);
  std::size_t i = 0;
  teacher.for_each_param([&](const std::string& name, Tensor<T>& p) {
    if (i >= src.size() || src[i]->shape() != p.shape())
      throw std::invalid_argument("ema_update: parameter mismatch at " + name);
    auto t = p.data();
    auto s = src[i++]->data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + (T(1) - m) * s[j];
  });
  ++state.updates;
}

}  // namespace hpm
