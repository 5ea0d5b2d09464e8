#pragma once

// Easy-to-hard mask generation: a fraction alpha_t of the masked set is taken
// from the top of the predicted-loss ranking, the rest drawn uniformly.

#include <cstdint>
#include <span>
#include <vector>

namespace hpm {

struct MaskSchedule {
  double gamma = 0.75;   // masked fraction of all patches
  double alpha0 = 0.0;   // guided fraction at t = 0
  double alphaT = 0.5;   // guided fraction at t = total_epochs
  std::int64_t total_epochs = 100;
  enum class Mode { argmax, argmin } mode = Mode::argmax;
  enum class Direction { easy_to_hard, hard_to_easy } direction = Direction::easy_to_hard;
};

// Endpoints after applying the schedule direction (hard-to-easy swaps them).
std::pair<double, double> schedule_direction(const MaskSchedule& s);

// Linear interpolation alpha_t = a0 + (t/T)(aT - a0) on directed endpoints.
// Requires 0 <= t <= total_epochs.
double alpha_at(const MaskSchedule& s, std::int64_t t);

struct PatchMask {
  std::vector<std::uint8_t> visible;    // per patch, 1 = visible, 0 = masked
  std::vector<std::int32_t> vis_idx;    // ascending
  std::vector<std::int32_t> mask_idx;   // ascending
  std::int64_t n_pred = 0;              // masked because of the loss ranking
  std::int64_t n_rand = 0;              // masked by the uniform draw
  std::uint64_t seed = 0;               // seed the mask was generated from

  std::int64_t n() const { return static_cast<std::int64_t>(visible.size()); }
};

// Masks floor(gamma*N) patches: the top floor(alpha_t*gamma*N) of the lhat
// ranking (stable ties by index; argmin mode ranks ascending), then a uniform
// draw without replacement from the remaining patches. Deterministic given
// (lhat, schedule, t, seed). Requires at least one masked and one visible
// patch.
PatchMask generate_mask(std::span<const float> lhat, const MaskSchedule& s, std::int64_t t,
                        std::uint64_t seed);

}  // namespace hpm
