#pragma once

// Evaluation without fine-tuning: k-NN over globally averaged encoder
// features, rank agreement between predicted and measured per-patch losses,
// hard-patch localization against the synthetic ground truth, and PGM
// heatmap export.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hpm/objectives.hpp"
#include "hpm/patch.hpp"
#include "hpm/vit.hpp"

namespace hpm {

struct FeatureSet {
  i64 n = 0, dim = 0;
  std::vector<float> vals;  // [n, dim] row-major
  std::vector<int> labels;  // size n
};

// Encoder output averaged over the patch axis, one row per image. Runs in
// slices of max_batch images to bound the transient graph.
FeatureSet encoder_feature_set(const HpmModel<float>& model, const PatchBatch& data,
                               const std::vector<int>& labels, i64 max_batch = 64);

struct KnnResult {
  double accuracy = 0;
  std::vector<int> predicted;  // per test point
};

// Cosine-distance k-NN with majority vote; a vote tie goes to the tied label
// whose representative sits nearest. k outside [1, train.n] is an error.
KnnResult knn_probe(const FeatureSet& train, const FeatureSet& test, i64 k);

struct MeasuredLosses {
  i64 b = 0, n = 0;
  std::vector<double> mean;      // [b, n]; meaningful only where count > 0
  std::vector<std::int32_t> count;  // [b, n] times the patch was masked
};

// Per-patch reconstruction loss averaged over n_masks uniform random masks
// (gamma masked fraction). A patch contributes only on draws that mask it.
MeasuredLosses measure_recon_losses(const HpmModel<float>& student, const PatchBatch& batch,
                                    const ReconTarget<float>& target, i64 n_masks, double gamma,
                                    std::uint64_t seed);

struct CorrelationReport {
  std::vector<double> rho, tau;  // per image, over patches masked at least once
  double mean_rho = 0, mean_tau = 0;
  i64 excluded = 0;  // patches never masked across all draws
};

// Rank agreement between predicted[b*n .. ] and measured means; rank
// statistics only, so any strictly increasing transform of predicted gives
// the same report.
CorrelationReport correlate_losses(std::span<const float> predicted,
                                   const MeasuredLosses& measured);

struct LossCorrelation {
  CorrelationReport report;
  std::vector<float> predicted;  // teacher per-patch scores [b, n]
  MeasuredLosses measured;
};

LossCorrelation loss_correlation(const HpmModel<float>& student, const HpmModel<float>& teacher,
                                 const PatchBatch& batch, i64 n_masks, double gamma,
                                 ReconTarget<float>::Kind target_kind, std::uint64_t seed);

struct HardPatchStats {
  double gap = 0;        // mean predicted loss: textured minus flat
  double precision = 0;  // top-|textured| predicted patches that are textured
};

HardPatchStats hard_patch_stats(std::span<const float> lhat,
                                std::span<const std::int32_t> textured);

// Per-patch values min-max scaled to 8 bits per image (constant map -> 128),
// upsampled patch x patch nearest-neighbor.
std::vector<std::uint8_t> heatmap_pixels(std::span<const float> vals, i64 grid_h, i64 grid_w,
                                         i64 patch);

void export_heatmap(std::span<const float> vals, i64 grid_h, i64 grid_w, i64 patch,
                    const std::string& path);

// Input image (channel-averaged) and heatmap side by side, width 2w.
void export_heatmap_composite(const ImageBatch& images, i64 index, std::span<const float> vals,
                              i64 patch, const std::string& path);

struct ProbeInputs {
  PatchBatch train;  // k-NN reference split
  std::vector<int> train_labels;
  PatchBatch eval;
  std::vector<int> eval_labels;
  std::vector<std::vector<std::int32_t>> eval_textured;  // ground-truth hard patches
  i64 n_masks = 10;
  double gamma = 0.75;
  ReconTarget<float>::Kind target = ReconTarget<float>::Kind::pixel;
  std::uint64_t seed = 0;
  std::vector<i64> ks = {1, 5, 10, 20};
};

struct ProbeReport {
  std::vector<std::pair<i64, double>> knn_acc;  // (k, accuracy), k <= train size
  double mean_rho = 0, mean_tau = 0;
  i64 excluded_patches = 0;
  double gap = 0;                // mean over images of per-image textured-flat gap
  double frac_gap_positive = 0;  // images whose textured mean exceeds the flat mean
  double precision_at_k = 0;     // mean over images, k = |textured|
  i64 images = 0;
};

ProbeReport run_probe(const HpmModel<float>& student, const HpmModel<float>& teacher,
                      const ProbeInputs& in);

std::string probe_report_text(const ProbeReport& r);
std::string probe_report_csv(const ProbeReport& r);

}  // namespace hpm
