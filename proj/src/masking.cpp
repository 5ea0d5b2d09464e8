#include "hpm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hpm/rng.hpp"

namespace hpm {

std::pair<double, double> schedule_direction(const MaskSchedule& s) {
  if (s.direction == MaskSchedule::Direction::easy_to_hard) return {s.alpha0, s.alphaT};
  return {s.alphaT, s.alpha0};
}

double alpha_at(const MaskSchedule& s, std::int64_t t) {
  if (s.total_epochs <= 0) throw std::invalid_argument("alpha_at: total_epochs must be positive");
  if (t < 0 || t > s.total_epochs)
    throw std::invalid_argument("alpha_at: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(s.total_epochs) + "]");
  auto [a0, aT] = schedule_direction(s);
  if (t == s.total_epochs) return aT;  // a0 + 1.0*(aT - a0) can round off aT
  return a0 + (static_cast<double>(t) / static_cast<double>(s.total_epochs)) * (aT - a0);
}

namespace {

// floor with a nudge so exact products like 0.75*64 don't land one below.
std::int64_t floor_count(double x) { return static_cast<std::int64_t>(std::floor(x + 1e-9)); }

}  // namespace

PatchMask generate_mask(std::span<const float> lhat, const MaskSchedule& s, std::int64_t t,
                        std::uint64_t seed) {
  const std::int64_t n = static_cast<std::int64_t>(lhat.size());
  if (s.gamma <= 0.0 || s.gamma >= 1.0)
    throw std::invalid_argument("generate_mask: gamma must be in (0,1)");
  const std::int64_t k = floor_count(s.gamma * static_cast<double>(n));
  if (k < 1) throw std::invalid_argument("generate_mask: floor(gamma*N) must be at least 1");
  if (n - k < 1)
    throw std::invalid_argument("generate_mask: at least one patch must stay visible");
  const double alpha = alpha_at(s, t);
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("generate_mask: alpha_t outside [0,1]");
  std::int64_t k_pred = floor_count(alpha * s.gamma * static_cast<double>(n));
  if (k_pred > k) k_pred = k;  // guards alpha == 1 against rounding

  // Stable ranking: ties broken by lower index first.
  std::vector<std::int32_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (s.mode == MaskSchedule::Mode::argmax)
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int32_t a, std::int32_t b) { return lhat[a] > lhat[b]; });
  else
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int32_t a, std::int32_t b) { return lhat[a] < lhat[b]; });

  PatchMask out;
  out.seed = seed;
  out.n_pred = k_pred;
  out.n_rand = k - k_pred;
  out.visible.assign(static_cast<std::size_t>(n), 1);
  out.mask_idx.assign(order.begin(), order.begin() + k_pred);

  std::vector<std::int32_t> rest(order.begin() + k_pred, order.end());
  std::sort(rest.begin(), rest.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::int32_t>(rest));
  out.mask_idx.insert(out.mask_idx.end(), rest.begin(), rest.begin() + out.n_rand);

  std::sort(out.mask_idx.begin(), out.mask_idx.end());
  for (std::int32_t i : out.mask_idx) out.visible[static_cast<std::size_t>(i)] = 0;
  out.vis_idx.reserve(static_cast<std::size_t>(n - k));
  for (std::int32_t i = 0; i < n; ++i)
    if (out.visible[static_cast<std::size_t>(i)]) out.vis_idx.push_back(i);
  return out;
}

}  // namespace hpm
