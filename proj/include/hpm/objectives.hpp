#pragma once

// Training objectives: masked reconstruction against pixel or teacher-feature
// targets, and the two loss-prediction objectives (absolute regression and
// relative pairwise ranking).

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <type_traits>
#include <stdexcept>
#include <vector>

#include "hpm/masking.hpp"
#include "hpm/patch.hpp"
#include "hpm/tensor.hpp"

namespace hpm {

inline constexpr double kTargetEps = 1e-6;  // pixel standardization and feature l2 guard

template <typename T>
struct ReconTarget {
  enum class Kind { pixel, ema_feature };
  Kind kind = Kind::pixel;
  Tensor<T> values;  // [B, N, dim], constant
};

// Per-patch standardized pixels: (x - mean) / (std + eps) over each patch.
// A constant patch maps to an all-zero target.
template <typename T>
ReconTarget<T> pixel_target(const PatchBatch& pb) {
  std::vector<T> out(static_cast<std::size_t>(pb.b * pb.n * pb.d));
  for (i64 row = 0; row < pb.b * pb.n; ++row) {
    const float* src = pb.vals.data() + row * pb.d;
    double mean = 0;
    for (i64 j = 0; j < pb.d; ++j) mean += src[j];
    mean /= static_cast<double>(pb.d);
    double var = 0;
    for (i64 j = 0; j < pb.d; ++j) {
      const double d = src[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(pb.d);
    const double denom = std::sqrt(var) + kTargetEps;
    T* dst = out.data() + row * pb.d;
    for (i64 j = 0; j < pb.d; ++j) dst[j] = static_cast<T>((src[j] - mean) / denom);
  }
  ReconTarget<T> t;
  t.kind = ReconTarget<T>::Kind::pixel;
  t.values = Tensor<T>::from_vector({pb.b, pb.n, pb.d}, std::move(out));
  return t;
}

// L2-normalized teacher features, detached from any graph.
template <typename T>
ReconTarget<T> ema_feature_target(const Tensor<T>& teacher_feats) {
  if (teacher_feats.shape().size() != 3)
    throw std::invalid_argument("ema_feature_target: expected [B, N, dim] features");
  ReconTarget<T> t;
  t.kind = ReconTarget<T>::Kind::ema_feature;
  t.values = l2_normalize_lastaxis(teacher_feats.detach(), static_cast<T>(kTargetEps));
  return t;
}

template <typename T>
struct ReconLossOut {
  Tensor<T> total;      // scalar, mean over all masked patches
  Tensor<T> per_patch;  // [B, k], aligned with mask_idx order per image
};

namespace detail {

template <typename T>
std::shared_ptr<std::vector<i32>> masked_index(const std::vector<PatchMask>& masks, i64 n,
                                               i64& k_out) {
  if (masks.empty()) throw std::invalid_argument("recon_loss: no masks");
  const i64 k = static_cast<i64>(masks[0].mask_idx.size());
  if (k < 1) throw std::invalid_argument("recon_loss: a mask has no masked patches");
  auto idx = std::make_shared<std::vector<i32>>();
  idx->reserve(masks.size() * static_cast<std::size_t>(k));
  for (const auto& pm : masks) {
    if (pm.n() != n) throw std::invalid_argument("recon_loss: mask length mismatch");
    if (static_cast<i64>(pm.mask_idx.size()) != k)
      throw std::invalid_argument("recon_loss: masked counts differ across batch");
    idx->insert(idx->end(), pm.mask_idx.begin(), pm.mask_idx.end());
  }
  k_out = k;
  return idx;
}

}  // namespace detail

// Masked reconstruction loss. Per-patch loss is the mean squared error over
// the target dims for pixel targets; for feature targets the prediction is
// l2-normalized first and the squared error is summed over dims, so unit
// vectors give exactly 2 - 2*cos(pred, target).
template <typename T>
ReconLossOut<T> recon_loss(const Tensor<T>& recon, const ReconTarget<T>& target,
                           const std::vector<PatchMask>& masks) {
  if (recon.shape().size() != 3 || recon.shape() != target.values.shape())
    throw std::invalid_argument("recon_loss: prediction/target shape mismatch");
  const i64 B = recon.shape()[0], N = recon.shape()[1];
  if (static_cast<i64>(masks.size()) != B)
    throw std::invalid_argument("recon_loss: one mask per image required");
  i64 k = 0;
  auto idx = detail::masked_index<T>(masks, N, k);
  auto pred_rows = gather_rows(recon, idx, k);
  auto target_rows = gather_rows(target.values, idx, k);
  ReconLossOut<T> out;
  if (target.kind == ReconTarget<T>::Kind::ema_feature) {
    pred_rows = l2_normalize_lastaxis(pred_rows, static_cast<T>(kTargetEps));
    auto d = sub(pred_rows, target_rows);
    out.per_patch = sum_axis(mul(d, d), 2);
  } else {
    auto d = sub(pred_rows, target_rows);
    out.per_patch = mean_axis(mul(d, d), 2);
  }
  out.total = mean_all(out.per_patch);
  return out;
}

// N x N comparison indicators over one image's per-patch losses; entries
// involving a visible patch are zero, ties produce no pair.
struct PairIndicators {
  i64 n = 0;
  std::vector<std::uint8_t> pos;  // [n*n], 1 where L(i) > L(j), both masked
  std::vector<std::uint8_t> neg;  // [n*n], 1 where L(i) < L(j), both masked
  i64 valid = 0;                  // number of nonzero entries across both
};

template <typename T>
PairIndicators make_pair_indicators(std::span<const T> lrec, std::span<const std::uint8_t> visible) {
  if (lrec.size() != visible.size())
    throw std::invalid_argument("pair_indicators: size mismatch");
  PairIndicators out;
  out.n = static_cast<i64>(lrec.size());
  out.pos.assign(static_cast<std::size_t>(out.n * out.n), 0);
  out.neg.assign(static_cast<std::size_t>(out.n * out.n), 0);
  for (i64 i = 0; i < out.n; ++i) {
    if (visible[static_cast<std::size_t>(i)]) continue;
    for (i64 j = 0; j < out.n; ++j) {
      if (i == j || visible[static_cast<std::size_t>(j)]) continue;
      if (lrec[static_cast<std::size_t>(i)] > lrec[static_cast<std::size_t>(j)]) {
        out.pos[static_cast<std::size_t>(i * out.n + j)] = 1;
        ++out.valid;
      } else if (lrec[static_cast<std::size_t>(i)] < lrec[static_cast<std::size_t>(j)]) {
        out.neg[static_cast<std::size_t>(i * out.n + j)] = 1;
        ++out.valid;
      }
    }
  }
  return out;
}

template <typename T>
struct ImagePairLoss {
  Tensor<T> loss;  // scalar; zero constant when no valid pair exists
  i64 valid = 0;
};

// Pairwise ranking over one image's masked patches: for every ordered pair
// with distinct measured losses, -log sigmoid of the correctly oriented
// prediction gap, summed and divided by the pair count. Log-sigmoid is
// computed as -softplus(-z).
template <typename T>
ImagePairLoss<T> pred_loss_relative_image(const Tensor<T>& lhat_masked,
                                          std::type_identity_t<std::span<const T>> lrec_masked) {
  if (lhat_masked.shape().size() != 1)
    throw std::invalid_argument("pred_loss: lhat must be rank 1");
  const i64 k = lhat_masked.shape()[0];
  if (static_cast<i64>(lrec_masked.size()) != k)
    throw std::invalid_argument("pred_loss: lhat/lrec size mismatch");
  std::vector<T> pos_m(static_cast<std::size_t>(k * k), T(0));
  std::vector<T> neg_m(static_cast<std::size_t>(k * k), T(0));
  i64 valid = 0;
  for (i64 i = 0; i < k; ++i)
    for (i64 j = 0; j < k; ++j) {
      if (i == j) continue;
      if (lrec_masked[static_cast<std::size_t>(i)] > lrec_masked[static_cast<std::size_t>(j)]) {
        pos_m[static_cast<std::size_t>(i * k + j)] = T(1);
        ++valid;
      } else if (lrec_masked[static_cast<std::size_t>(i)] <
                 lrec_masked[static_cast<std::size_t>(j)]) {
        neg_m[static_cast<std::size_t>(i * k + j)] = T(1);
        ++valid;
      }
    }
  ImagePairLoss<T> out;
  out.valid = valid;
  if (valid == 0) {
    out.loss = Tensor<T>::scalar(T(0));
    return out;
  }
  auto d = pairwise_diff(lhat_masked);  // d[i,j] = lhat_i - lhat_j
  auto pos_t = Tensor<T>::from_vector({k, k}, std::move(pos_m));
  auto neg_t = Tensor<T>::from_vector({k, k}, std::move(neg_m));
  auto terms = add(mul(pos_t, softplus(neg(d))), mul(neg_t, softplus(d)));
  out.loss = mul_scalar(sum_all(terms), T(1) / static_cast<T>(valid));
  return out;
}

template <typename T>
struct BatchPredLoss {
  Tensor<T> loss;              // scalar, mean of per-image normalized losses
  i64 degenerate_images = 0;   // images with no valid pair (contributed zero)
};

namespace detail {

// lhat [B, N] -> masked entries of one image as a rank-1 tensor [k_b].
template <typename T>
Tensor<T> gather_masked_row(const Tensor<T>& lhat, const PatchMask& pm, i64 b) {
  const i64 N = lhat.shape()[1];
  auto row = reshape(slice_group(lhat, b), {1, N, 1});
  auto idx = std::make_shared<std::vector<i32>>(pm.mask_idx.begin(), pm.mask_idx.end());
  const i64 k = static_cast<i64>(pm.mask_idx.size());
  return reshape(gather_rows(row, idx, k), {k});
}

}  // namespace detail

// Batch ranking loss: per-image normalized sums averaged over the batch.
// Images without a valid pair contribute zero and are counted.
template <typename T>
BatchPredLoss<T> pred_loss_relative(const Tensor<T>& lhat,
                                    std::type_identity_t<std::span<const T>> lrec,
                                    const std::vector<PatchMask>& masks) {
  if (lhat.shape().size() != 2) throw std::invalid_argument("pred_loss: lhat must be [B, N]");
  const i64 B = lhat.shape()[0];
  if (static_cast<i64>(masks.size()) != B)
    throw std::invalid_argument("pred_loss: one mask per image required");
  BatchPredLoss<T> out;
  std::vector<Tensor<T>> terms;
  std::size_t off = 0;
  for (i64 b = 0; b < B; ++b) {
    const auto& pm = masks[static_cast<std::size_t>(b)];
    const std::size_t k = pm.mask_idx.size();
    if (off + k > lrec.size()) throw std::invalid_argument("pred_loss: lrec too short");
    auto row = detail::gather_masked_row(lhat, pm, b);
    auto img = pred_loss_relative_image(row, lrec.subspan(off, k));
    if (img.valid == 0) ++out.degenerate_images;
    terms.push_back(img.loss);
    off += k;
  }
  if (off != lrec.size()) throw std::invalid_argument("pred_loss: lrec length mismatch");
  out.loss = mul_scalar(add_n(terms), T(1) / static_cast<T>(B));
  return out;
}

// Absolute variant: mean squared error between predicted and measured
// per-patch loss over all masked patches in the batch.
template <typename T>
Tensor<T> pred_loss_absolute(const Tensor<T>& lhat,
                             std::type_identity_t<std::span<const T>> lrec,
                             const std::vector<PatchMask>& masks) {
  if (lhat.shape().size() != 2) throw std::invalid_argument("pred_loss: lhat must be [B, N]");
  const i64 B = lhat.shape()[0], N = lhat.shape()[1];
  if (static_cast<i64>(masks.size()) != B)
    throw std::invalid_argument("pred_loss: one mask per image required");
  i64 k = 0;
  auto idx = detail::masked_index<T>(masks, N, k);
  if (static_cast<i64>(lrec.size()) != B * k)
    throw std::invalid_argument("pred_loss: lrec length mismatch");
  auto rows = reshape(gather_rows(reshape(lhat, {B, N, 1}), idx, k), {B, k});
  auto target = Tensor<T>::from_vector({B, k}, std::vector<T>(lrec.begin(), lrec.end()));
  auto d = sub(rows, target);
  return mean_all(mul(d, d));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& lrec_total, const Tensor<T>& lpred_total) {
  return add(lrec_total, lpred_total);
}

}  // namespace hpm
