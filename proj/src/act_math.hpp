// Float fast paths for the exp/erf-based activations. Both kernel flavors
// end up in the serial per-element routines, so this is the single source of
// truth; changing a coefficient here changes every run identically.
//
// The float overloads are branch-free polynomial evaluations that the
// compiler auto-vectorizes; libm's erff/expf are scalar calls and dominate
// the training step otherwise. Double keeps libm: the double path is the
// oracle in the f32 gradchecks (f64 central differences at h=1e-3, tolerance
// 1e-4), which the ~2e-7 float approximation error clears with margin.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace hpm::kern::detail {

// exp(x) with |rel err| < 3e-7. Range reduction x = k*ln2 + r, r in
// [-ln2/2, ln2/2], degree-5 polynomial for e^r (Cephes expf coefficients),
// scale by 2^k through the exponent bits. Clamp keeps 2^k a normal float:
// exp(-87) ~ 1.6e-38 just above FLT_MIN, exp(88) ~ 1.7e38 below FLT_MAX.
// Branch-free on purpose; with -fno-trapping-math (set on the kernel
// translation units) the whole body if-converts and auto-vectorizes.
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  // Adding 1.5*2^23 rounds x*log2e to the nearest integer in the low
  // mantissa bits (|x*log2e| <= 127, well inside the 2^23 binade).
  const float t = x * 1.44269504088896341f + 12582912.0f;
  const auto ki = std::bit_cast<std::int32_t>(t) - std::bit_cast<std::int32_t>(12582912.0f);
  const float k = t - 12582912.0f;
  // Cody-Waite split of ln2 keeps r accurate when k*ln2 cancels x.
  float r = x - k * 0.693359375f;
  r -= k * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = r * r * p + r + 1.0f;
  return y * std::bit_cast<float>((ki + 127) << 23);
}

inline double exp_fast(double x) { return std::exp(x); }

// erf(x) with |abs err| <= 2.5e-7: Abramowitz-Stegun 7.1.26 rational fit on
// |x| (1.5e-7) plus the exp_fast error, odd-extended via sign transfer.
inline float erf_fast(float x) {
  const float ax = std::fabs(x);
  const float t = 1.0f / (1.0f + 0.3275911f * ax);
  float p = 1.061405429f;
  p = p * t - 1.453152027f;
  p = p * t + 1.421413741f;
  p = p * t - 0.284496736f;
  p = p * t + 0.254829592f;
  p = p * t;
  const float y = 1.0f - p * exp_fast(-ax * ax);
  return std::copysign(y, x);
}

inline double erf_fast(double x) { return std::erf(x); }

}  // namespace hpm::kern::detail
