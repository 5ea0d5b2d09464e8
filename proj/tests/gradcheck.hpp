#pragma once

// Finite-difference oracle for the autodiff layer. The function under test is
// a generic callable evaluated twice: once in the scalar type being checked
// (reverse-mode grads) and once in double (central differences). Running the
// difference quotient in double keeps the oracle honest for f32 checks, where
// an all-f32 quotient would drown in rounding noise at any usable step size.
//
// Pinned tolerances (relative, denominator max(|ad|, |fd|, floor)):
//   f32 vs f64 FD, h = 1e-3: expect < 1e-4 per op
//   f64 vs f64 FD, h = 1e-5: expect < 1e-7 per op

#include <cmath>
#include <utility>
#include <vector>

#include "hpm/rng.hpp"
#include "hpm/tensor.hpp"

namespace gradcheck {

struct LeafSpec {
  hpm::Shape shape;
  std::vector<double> values;
};

inline LeafSpec random_leaf(hpm::Rng& r, hpm::Shape shape, double lo = -1.0, double hi = 1.0) {
  LeafSpec leaf{std::move(shape), {}};
  leaf.values.resize(static_cast<std::size_t>(hpm::numel_of(leaf.shape)));
  for (auto& v : leaf.values) v = r.uniform(lo, hi);
  return leaf;
}

template <typename T>
std::vector<hpm::Tensor<T>> materialize(const std::vector<LeafSpec>& specs, bool requires_grad) {
  std::vector<hpm::Tensor<T>> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    std::vector<T> v(s.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(s.values[i]);
    out.push_back(hpm::Tensor<T>::from_vector(s.shape, std::move(v), requires_grad));
  }
  return out;
}

// Max relative error between reverse-mode grads (computed in T) and central
// finite differences (computed in double), over every element of every leaf.
template <typename T, typename F>
double max_rel_error(F&& f, const std::vector<LeafSpec>& specs, double h, double floor) {
  auto leaves = materialize<T>(specs, true);
  hpm::Tensor<T> loss = f(leaves);
  loss.backward();

  double worst = 0.0;
  std::vector<LeafSpec> probe = specs;
  for (std::size_t li = 0; li < specs.size(); ++li) {
    for (std::size_t ei = 0; ei < specs[li].values.size(); ++ei) {
      const double keep = probe[li].values[ei];
      probe[li].values[ei] = keep + h;
      const double up = static_cast<double>(f(materialize<double>(probe, false)).item());
      probe[li].values[ei] = keep - h;
      const double dn = static_cast<double>(f(materialize<double>(probe, false)).item());
      probe[li].values[ei] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double ad = static_cast<double>(leaves[li].grad()[ei]);
      const double denom = std::max({std::abs(ad), std::abs(fd), floor});
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  return worst;
}

inline constexpr double kF32Step = 1e-3;
inline constexpr double kF64Step = 1e-5;
inline constexpr double kF32OpTol = 1e-4;
inline constexpr double kF64OpTol = 1e-7;
inline constexpr double kFloor = 1e-6;

// Checks one functor in both precisions against the pinned tolerances.
template <typename F>
std::pair<double, double> check_both(F&& f, const std::vector<LeafSpec>& specs) {
  const double e32 = max_rel_error<float>(f, specs, kF32Step, kFloor);
  const double e64 = max_rel_error<double>(f, specs, kF64Step, kFloor);
  return {e32, e64};
}

}  // namespace gradcheck
