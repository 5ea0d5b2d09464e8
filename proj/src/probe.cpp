#include "hpm/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hpm/masking.hpp"
#include "hpm/rng.hpp"
#include "hpm/stats.hpp"

namespace hpm {

FeatureSet encoder_feature_set(const HpmModel<float>& model, const PatchBatch& data,
                               const std::vector<int>& labels, i64 max_batch) {
  if (!labels.empty() && static_cast<i64>(labels.size()) != data.b)
    throw std::invalid_argument("feature set: label count differs from image count");
  if (max_batch < 1) throw std::invalid_argument("feature set: max_batch < 1");
  const i64 D = model.cfg.enc_dim, N = data.n;
  FeatureSet out;
  out.n = data.b;
  out.dim = D;
  out.vals.resize(static_cast<std::size_t>(data.b * D));
  out.labels = labels;

  PatchBatch slice = data;
  for (i64 start = 0; start < data.b; start += max_batch) {
    const i64 nb = std::min(max_batch, data.b - start);
    slice.b = nb;
    const std::size_t row = static_cast<std::size_t>(data.n * data.d);
    slice.vals.assign(data.vals.begin() + static_cast<std::ptrdiff_t>(start * data.n * data.d),
                      data.vals.begin() +
                          static_cast<std::ptrdiff_t>((start + nb) * data.n * data.d));
    (void)row;
    auto feats = encoder_features(model, slice);  // [nb, N, D]
    std::span<const float> f = feats.data();
    for (i64 b = 0; b < nb; ++b)
      for (i64 d = 0; d < D; ++d) {
        double acc = 0;
        for (i64 p = 0; p < N; ++p) acc += f[static_cast<std::size_t>((b * N + p) * D + d)];
        out.vals[static_cast<std::size_t>((start + b) * D + d)] =
            static_cast<float>(acc / static_cast<double>(N));
      }
  }
  return out;
}

namespace {

// Rows scaled to unit length; a row of vanishing norm stays zero, giving it
// cosine similarity 0 against everything.
std::vector<float> unit_rows(const FeatureSet& fs) {
  std::vector<float> out(fs.vals.size());
  for (i64 r = 0; r < fs.n; ++r) {
    double sq = 0;
    const std::size_t off = static_cast<std::size_t>(r * fs.dim);
    for (i64 d = 0; d < fs.dim; ++d) sq += static_cast<double>(fs.vals[off + d]) * fs.vals[off + d];
    const double norm = std::sqrt(sq);
    if (norm > 1e-12)
      for (i64 d = 0; d < fs.dim; ++d)
        out[off + d] = static_cast<float>(fs.vals[off + d] / norm);
  }
  return out;
}

}  // namespace

KnnResult knn_probe(const FeatureSet& train, const FeatureSet& test, i64 k) {
  if (k < 1 || k > train.n)
    throw std::invalid_argument("knn_probe: k must be in [1, train size], got " +
                                std::to_string(k) + " with " + std::to_string(train.n) +
                                " references");
  if (train.dim != test.dim) throw std::invalid_argument("knn_probe: feature dim mismatch");
  if (static_cast<i64>(train.labels.size()) != train.n)
    throw std::invalid_argument("knn_probe: train labels missing");
  if (static_cast<i64>(test.labels.size()) != test.n)
    throw std::invalid_argument("knn_probe: test labels missing");

  const std::vector<float> tr = unit_rows(train), te = unit_rows(test);
  KnnResult res;
  res.predicted.resize(static_cast<std::size_t>(test.n));
  i64 correct = 0;
  std::vector<std::pair<double, i64>> dist(static_cast<std::size_t>(train.n));
  for (i64 q = 0; q < test.n; ++q) {
    const std::size_t qoff = static_cast<std::size_t>(q * test.dim);
    for (i64 r = 0; r < train.n; ++r) {
      const std::size_t roff = static_cast<std::size_t>(r * train.dim);
      double dot = 0;
      for (i64 d = 0; d < train.dim; ++d)
        dot += static_cast<double>(te[qoff + d]) * tr[roff + d];
      dist[static_cast<std::size_t>(r)] = {1.0 - dot, r};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    // Majority vote over the k nearest; ties resolved by the closest member
    // of the tied labels (the k-list is distance-sorted, so first hit wins).
    std::vector<std::pair<int, int>> votes;  // (label, count)
    for (i64 j = 0; j < k; ++j) {
      const int lab = train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(j)].second)];
      auto it = std::find_if(votes.begin(), votes.end(),
                             [&](const auto& v) { return v.first == lab; });
      if (it == votes.end())
        votes.push_back({lab, 1});
      else
        ++it->second;
    }
    int best = 0;
    for (const auto& v : votes) best = std::max(best, v.second);
    int winner = -1;
    for (i64 j = 0; j < k && winner < 0; ++j) {
      const int lab = train.labels[static_cast<std::size_t>(dist[static_cast<std::size_t>(j)].second)];
      for (const auto& v : votes)
        if (v.first == lab && v.second == best) winner = lab;
    }
    res.predicted[static_cast<std::size_t>(q)] = winner;
    if (winner == test.labels[static_cast<std::size_t>(q)]) ++correct;
  }
  res.accuracy = test.n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.n);
  return res;
}

MeasuredLosses measure_recon_losses(const HpmModel<float>& student, const PatchBatch& batch,
                                    const ReconTarget<float>& target, i64 n_masks, double gamma,
                                    std::uint64_t seed) {
  if (n_masks < 1) throw std::invalid_argument("measure_recon_losses: n_masks < 1");
  const i64 B = batch.b, N = batch.n;
  MeasuredLosses out;
  out.b = B;
  out.n = N;
  out.mean.assign(static_cast<std::size_t>(B * N), 0.0);
  out.count.assign(static_cast<std::size_t>(B * N), 0);

  MaskSchedule uniform;
  uniform.gamma = gamma;
  uniform.alpha0 = 0.0;
  uniform.alphaT = 0.0;
  uniform.total_epochs = 1;
  const std::vector<float> flat_scores(static_cast<std::size_t>(N), 0.0f);

  Rng rng = Rng::stream(seed, 17);
  for (i64 draw = 0; draw < n_masks; ++draw) {
    std::vector<PatchMask> masks;
    masks.reserve(static_cast<std::size_t>(B));
    for (i64 b = 0; b < B; ++b)
      masks.push_back(generate_mask(flat_scores, uniform, 0, rng.next_u64()));
    auto sf = student_forward(student, batch, masks);
    auto rl = recon_loss(sf.recon, target, masks);
    std::span<const float> pp = rl.per_patch.data();
    std::size_t off = 0;
    for (i64 b = 0; b < B; ++b) {
      const auto& pm = masks[static_cast<std::size_t>(b)];
      for (std::size_t j = 0; j < pm.mask_idx.size(); ++j) {
        const std::size_t cell = static_cast<std::size_t>(b * N + pm.mask_idx[j]);
        out.mean[cell] += pp[off + j];
        ++out.count[cell];
      }
      off += pm.mask_idx.size();
    }
  }
  for (std::size_t i = 0; i < out.mean.size(); ++i)
    if (out.count[i] > 0) out.mean[i] /= static_cast<double>(out.count[i]);
  return out;
}

CorrelationReport correlate_losses(std::span<const float> predicted,
                                   const MeasuredLosses& measured) {
  if (static_cast<i64>(predicted.size()) != measured.b * measured.n)
    throw std::invalid_argument("correlate_losses: predicted length mismatch");
  CorrelationReport rep;
  for (i64 b = 0; b < measured.b; ++b) {
    std::vector<double> p, m;
    p.reserve(static_cast<std::size_t>(measured.n));
    m.reserve(static_cast<std::size_t>(measured.n));
    for (i64 i = 0; i < measured.n; ++i) {
      const std::size_t cell = static_cast<std::size_t>(b * measured.n + i);
      if (measured.count[cell] > 0) {
        p.push_back(predicted[cell]);
        m.push_back(measured.mean[cell]);
      } else {
        ++rep.excluded;
      }
    }
    rep.rho.push_back(stats::spearman(p, m));
    rep.tau.push_back(stats::kendall(p, m));
  }
  if (!rep.rho.empty()) {
    rep.mean_rho = std::accumulate(rep.rho.begin(), rep.rho.end(), 0.0) /
                   static_cast<double>(rep.rho.size());
    rep.mean_tau = std::accumulate(rep.tau.begin(), rep.tau.end(), 0.0) /
                   static_cast<double>(rep.tau.size());
  }
  return rep;
}

LossCorrelation loss_correlation(const HpmModel<float>& student, const HpmModel<float>& teacher,
                                 const PatchBatch& batch, i64 n_masks, double gamma,
                                 ReconTarget<float>::Kind target_kind, std::uint64_t seed) {
  auto tf = teacher_forward(teacher, batch);
  LossCorrelation out;
  out.predicted.assign(tf.pred.data().begin(), tf.pred.data().end());
  ReconTarget<float> target = target_kind == ReconTarget<float>::Kind::pixel
                                  ? pixel_target<float>(batch)
                                  : ema_feature_target(tf.features);
  out.measured = measure_recon_losses(student, batch, target, n_masks, gamma, seed);
  out.report = correlate_losses(out.predicted, out.measured);
  return out;
}

HardPatchStats hard_patch_stats(std::span<const float> lhat,
                                std::span<const std::int32_t> textured) {
  const i64 n = static_cast<i64>(lhat.size());
  std::vector<bool> is_tex(static_cast<std::size_t>(n), false);
  for (std::int32_t idx : textured) {
    if (idx < 0 || idx >= n) throw std::invalid_argument("hard_patch_stats: index out of range");
    is_tex[static_cast<std::size_t>(idx)] = true;
  }
  const i64 k = static_cast<i64>(textured.size());
  if (k == 0 || k == n)
    throw std::invalid_argument("hard_patch_stats: need both textured and flat patches");

  double tex_sum = 0, flat_sum = 0;
  for (i64 i = 0; i < n; ++i)
    (is_tex[static_cast<std::size_t>(i)] ? tex_sum : flat_sum) += lhat[static_cast<std::size_t>(i)];
  HardPatchStats st;
  st.gap = tex_sum / static_cast<double>(k) - flat_sum / static_cast<double>(n - k);

  std::vector<i64> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](i64 a, i64 b) {
    return lhat[static_cast<std::size_t>(a)] > lhat[static_cast<std::size_t>(b)];
  });
  i64 hits = 0;
  for (i64 j = 0; j < k; ++j)
    if (is_tex[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]) ++hits;
  st.precision = static_cast<double>(hits) / static_cast<double>(k);
  return st;
}

std::vector<std::uint8_t> heatmap_pixels(std::span<const float> vals, i64 grid_h, i64 grid_w,
                                         i64 patch) {
  if (static_cast<i64>(vals.size()) != grid_h * grid_w)
    throw std::invalid_argument("heatmap: value count differs from grid size");
  if (patch < 1) throw std::invalid_argument("heatmap: patch < 1");
  float lo = vals[0], hi = vals[0];
  for (float v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const i64 H = grid_h * patch, W = grid_w * patch;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(H * W));
  const bool flat = !(static_cast<double>(hi) - lo > 0.0);
  for (i64 gy = 0; gy < grid_h; ++gy)
    for (i64 gx = 0; gx < grid_w; ++gx) {
      const float v = vals[static_cast<std::size_t>(gy * grid_w + gx)];
      const std::uint8_t g =
          flat ? std::uint8_t{128}
               : static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(v) - lo) /
                                                       (static_cast<double>(hi) - lo)));
      for (i64 py = 0; py < patch; ++py)
        for (i64 px = 0; px < patch; ++px)
          img[static_cast<std::size_t>((gy * patch + py) * W + gx * patch + px)] = g;
    }
  return img;
}

void export_heatmap(std::span<const float> vals, i64 grid_h, i64 grid_w, i64 patch,
                    const std::string& path) {
  auto img = heatmap_pixels(vals, grid_h, grid_w, patch);
  write_pgm(path, grid_w * patch, grid_h * patch, img);
}

void export_heatmap_composite(const ImageBatch& images, i64 index, std::span<const float> vals,
                              i64 patch, const std::string& path) {
  if (index < 0 || index >= images.b)
    throw std::invalid_argument("composite: image index out of range");
  if (images.h % patch != 0 || images.w % patch != 0)
    throw std::invalid_argument("composite: image size not divisible by patch");
  auto heat = heatmap_pixels(vals, images.h / patch, images.w / patch, patch);
  const i64 H = images.h, W = images.w;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H * 2 * W));
  for (i64 y = 0; y < H; ++y) {
    for (i64 x = 0; x < W; ++x) {
      double lum = 0;
      for (i64 c = 0; c < images.c; ++c) lum += images.at(index, y, x, c);
      lum /= static_cast<double>(images.c);
      out[static_cast<std::size_t>(y * 2 * W + x)] =
          static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(lum, 0.0, 1.0)));
      out[static_cast<std::size_t>(y * 2 * W + W + x)] = heat[static_cast<std::size_t>(y * W + x)];
    }
  }
  write_pgm(path, 2 * W, H, out);
}

ProbeReport run_probe(const HpmModel<float>& student, const HpmModel<float>& teacher,
                      const ProbeInputs& in) {
  ProbeReport rep;
  rep.images = in.eval.b;

  auto train_fs = encoder_feature_set(student, in.train, in.train_labels);
  auto eval_fs = encoder_feature_set(student, in.eval, in.eval_labels);
  for (i64 k : in.ks)
    if (k >= 1 && k <= train_fs.n)
      rep.knn_acc.push_back({k, knn_probe(train_fs, eval_fs, k).accuracy});

  auto lc = loss_correlation(student, teacher, in.eval, in.n_masks, in.gamma, in.target, in.seed);
  rep.mean_rho = lc.report.mean_rho;
  rep.mean_tau = lc.report.mean_tau;
  rep.excluded_patches = lc.report.excluded;

  if (!in.eval_textured.empty()) {
    if (static_cast<i64>(in.eval_textured.size()) != in.eval.b)
      throw std::invalid_argument("run_probe: textured sets do not match eval images");
    double gap_sum = 0, prec_sum = 0;
    i64 positive = 0;
    for (i64 b = 0; b < in.eval.b; ++b) {
      std::span<const float> row(lc.predicted.data() + b * in.eval.n,
                                 static_cast<std::size_t>(in.eval.n));
      auto st = hard_patch_stats(row, in.eval_textured[static_cast<std::size_t>(b)]);
      gap_sum += st.gap;
      prec_sum += st.precision;
      if (st.gap > 0) ++positive;
    }
    rep.gap = gap_sum / static_cast<double>(in.eval.b);
    rep.precision_at_k = prec_sum / static_cast<double>(in.eval.b);
    rep.frac_gap_positive = static_cast<double>(positive) / static_cast<double>(in.eval.b);
  }
  return rep;
}

std::string probe_report_text(const ProbeReport& r) {
  std::ostringstream os;
  os << "probe report (" << r.images << " images)\n";
  for (const auto& [k, acc] : r.knn_acc) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  knn k=%-3lld accuracy %.4f\n",
                  static_cast<long long>(k), acc);
    os << buf;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "  loss rank agreement: spearman %.4f  kendall %.4f  (excluded %lld)\n",
                r.mean_rho, r.mean_tau, static_cast<long long>(r.excluded_patches));
  os << buf;
  std::snprintf(buf, sizeof buf,
                "  hard patches: gap %.6f  gap>0 on %.1f%% of images  precision@k %.4f\n",
                r.gap, 100.0 * r.frac_gap_positive, r.precision_at_k);
  os << buf;
  return os.str();
}

std::string probe_report_csv(const ProbeReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  char buf[96];
  for (const auto& [k, acc] : r.knn_acc) {
    std::snprintf(buf, sizeof buf, "knn_acc_k%lld,%.9g\n", static_cast<long long>(k), acc);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mean_spearman,%.9g\n", r.mean_rho);
  os << buf;
  std::snprintf(buf, sizeof buf, "mean_kendall,%.9g\n", r.mean_tau);
  os << buf;
  os << "excluded_patches," << r.excluded_patches << "\n";
  std::snprintf(buf, sizeof buf, "textured_flat_gap,%.9g\n", r.gap);
  os << buf;
  std::snprintf(buf, sizeof buf, "frac_gap_positive,%.9g\n", r.frac_gap_positive);
  os << buf;
  std::snprintf(buf, sizeof buf, "precision_at_k,%.9g\n", r.precision_at_k);
  os << buf;
  os << "images," << r.images << "\n";
  return os.str();
}

}  // namespace hpm
