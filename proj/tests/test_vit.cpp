#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "hpm/vit.hpp"

using namespace hpm;

namespace {

PatchBatch small_batch(std::int64_t b, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.n_images = b;
  spec.seed = seed;
  Corpus c = generate_synthetic_corpus(spec);
  return patchify(c.images, spec.p);
}

std::vector<PatchMask> default_masks(std::int64_t b, std::int64_t n, std::uint64_t seed) {
  MaskSchedule s;  // gamma 0.75, alpha_t(50) = 0.25
  std::vector<PatchMask> masks;
  Rng rng(seed);
  std::vector<float> lhat(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < b; ++i) {
    for (auto& v : lhat) v = static_cast<float>(rng.uniform());
    masks.push_back(generate_mask(lhat, s, 50, rng.next_u64()));
  }
  return masks;
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(HpmModel<T>& m) {
  std::vector<std::vector<T>> out;
  m.for_each_param([&](const std::string&, Tensor<T>& p) {
    out.emplace_back(p.data().begin(), p.data().end());
  });
  return out;
}

}  // namespace

TEST_SUITE("vit") {
  TEST_CASE("position table rows are distinct and the odd dim is rejected") {
    auto table = sincos_pos_table<float>(8, 8, 64);
    REQUIRE(table.size() == 64u * 64u);
    double min_linf = 1e30;
    for (int i = 0; i < 64; ++i)
      for (int j = i + 1; j < 64; ++j) {
        double linf = 0;
        for (int d = 0; d < 64; ++d)
          linf = std::max(linf, std::abs(double(table[i * 64 + d]) - double(table[j * 64 + d])));
        min_linf = std::min(min_linf, linf);
      }
    CHECK(min_linf > 0.0);
    CHECK_THROWS_AS(sincos_pos_table<float>(8, 8, 63), std::invalid_argument);
    // dim = 2 cannot tell columns apart on a 2D grid
    CHECK_THROWS_AS(sincos_pos_table<float>(8, 8, 2), std::invalid_argument);
    // dim == 2 mod 4 is fine; vertical axis takes the larger half
    auto t6 = sincos_pos_table<float>(4, 4, 6);
    CHECK(t6.size() == 16u * 6u);
  }

  TEST_CASE("init is deterministic in the seed and names are unique") {
    ModelConfig cfg;
    Rng r1(3), r2(3), r3(4);
    auto a = init_model<float>(cfg, r1);
    auto b = init_model<float>(cfg, r2);
    auto c = init_model<float>(cfg, r3);
    auto sa = snapshot_params(a), sb = snapshot_params(b), sc = snapshot_params(c);
    CHECK(sa == sb);
    CHECK(sa != sc);
    std::set<std::string> names;
    std::int64_t count = 0;
    a.for_each_param([&](const std::string& n, Tensor<float>&) {
      names.insert(n);
      ++count;
    });
    CHECK(static_cast<std::int64_t>(names.size()) == count);
    // 2 + depth*16 + 2 for the encoder, 2 + 1 + depth*16 + 4 per decoder
    CHECK(count == 2 + 4 * 16 + 2 + 2 * (7 + 2 * 16));
  }

  TEST_CASE("weights are near 0.02-scale normal, norms ones, biases zero") {
    ModelConfig cfg;
    Rng rng(5);
    auto m = init_model<float>(cfg, rng);
    double wsum = 0, wsq = 0;
    std::int64_t wn = 0;
    m.for_each_param([&](const std::string& n, Tensor<float>& p) {
      const bool is_matrix = p.shape().size() == 2;
      const bool is_gain = n.ends_with(".g");
      const bool is_token = n.ends_with("mask_token");
      for (float v : p.data()) {
        if (is_matrix || is_token) {
          wsum += v;
          wsq += double(v) * v;
          ++wn;
          CHECK(std::abs(v) <= 0.04f);  // truncation at two sigma
        } else if (is_gain) {
          CHECK(v == 1.0f);
        } else {
          CHECK(v == 0.0f);
        }
      }
    });
    const double mean = wsum / wn;
    const double var = wsq / wn - mean * mean;
    CHECK(std::abs(mean) < 1e-3);
    CHECK(var == doctest::Approx(0.02 * 0.02).epsilon(0.15));
  }

  TEST_CASE("student and teacher output shapes") {
    ModelConfig cfg;
    Rng rng(7);
    auto m = init_model<float>(cfg, rng);
    PatchBatch pb = small_batch(2, 11);
    auto masks = default_masks(2, 64, 13);
    auto out = student_forward(m, pb, masks);
    CHECK(out.features.shape() == Shape{2, 16, 64});
    CHECK(out.recon.shape() == Shape{2, 64, 16});
    CHECK(out.pred.shape() == Shape{2, 64});
    auto t = teacher_forward(m, pb);
    CHECK(t.features.shape() == Shape{2, 64, 64});
    CHECK(t.pred.shape() == Shape{2, 64});
    CHECK(t.recon.node() == nullptr);  // reconstructor skipped on the teacher path
    auto feats = encoder_features(m, pb);
    CHECK(feats.shape() == Shape{2, 64, 64});
    CHECK(std::equal(feats.data().begin(), feats.data().end(), t.features.data().begin()));
  }

  TEST_CASE("forward is a pure function of its inputs") {
    ModelConfig cfg;
    Rng rng(9);
    auto m = init_model<float>(cfg, rng);
    PatchBatch pb = small_batch(2, 21);
    auto masks = default_masks(2, 64, 23);
    auto a = student_forward(m, pb, masks);
    auto b = student_forward(m, pb, masks);
    CHECK(std::equal(a.recon.data().begin(), a.recon.data().end(), b.recon.data().begin()));
    CHECK(std::equal(a.pred.data().begin(), a.pred.data().end(), b.pred.data().begin()));
  }

  TEST_CASE("images in a batch do not interact") {
    ModelConfig cfg;
    Rng rng(15);
    auto m = init_model<float>(cfg, rng);
    PatchBatch two = small_batch(2, 31);
    auto masks = default_masks(2, 64, 33);
    auto pair = student_forward(m, two, masks);
    PatchBatch one = two;
    one.b = 1;
    one.vals.resize(static_cast<std::size_t>(two.n * two.d));
    auto solo = student_forward(m, one, {masks[0]});
    const std::size_t len = static_cast<std::size_t>(two.n * 16);
    for (std::size_t i = 0; i < len; ++i) REQUIRE(pair.recon.data()[i] == solo.recon.data()[i]);
  }

  TEST_CASE("masked patch content never reaches the outputs") {
    ModelConfig cfg;
    Rng rng(17);
    auto m = init_model<float>(cfg, rng);
    PatchBatch pb = small_batch(1, 41);
    auto masks = default_masks(1, 64, 43);
    const std::int32_t hidden = masks[0].mask_idx[0];
    const std::int32_t shown = masks[0].vis_idx[0];
    auto base = student_forward(m, pb, masks);

    PatchBatch tampered = pb;
    for (std::int64_t j = 0; j < pb.d; ++j)
      tampered.vals[static_cast<std::size_t>(hidden * pb.d + j)] += 0.37f;
    auto hid = student_forward(m, tampered, masks);
    CHECK(std::equal(base.recon.data().begin(), base.recon.data().end(), hid.recon.data().begin()));
    CHECK(std::equal(base.pred.data().begin(), base.pred.data().end(), hid.pred.data().begin()));

    PatchBatch tampered2 = pb;
    for (std::int64_t j = 0; j < pb.d; ++j)
      tampered2.vals[static_cast<std::size_t>(shown * pb.d + j)] += 0.37f;
    auto vis = student_forward(m, tampered2, masks);
    CHECK_FALSE(
        std::equal(base.recon.data().begin(), base.recon.data().end(), vis.recon.data().begin()));
  }

  TEST_CASE("teacher forward leaves parameters untouched and builds no graph") {
    ModelConfig cfg;
    Rng rng(19);
    auto m = init_model<float>(cfg, rng, /*requires_grad=*/false);
    auto before = snapshot_params(m);
    PatchBatch pb = small_batch(2, 51);
    auto out = teacher_forward(m, pb);
    CHECK(snapshot_params(m) == before);
    CHECK_FALSE(out.pred.requires_grad());
    CHECK_FALSE(out.features.requires_grad());
  }

  TEST_CASE("degenerate masks are rejected") {
    ModelConfig cfg;
    Rng rng(23);
    auto m = init_model<float>(cfg, rng);
    PatchBatch pb = small_batch(1, 61);
    PatchMask all_vis;
    all_vis.visible.assign(64, 1);
    for (std::int32_t i = 0; i < 64; ++i) all_vis.vis_idx.push_back(i);
    CHECK_THROWS_AS(student_forward(m, pb, {all_vis}), std::invalid_argument);
    PatchMask all_masked;
    all_masked.visible.assign(64, 0);
    for (std::int32_t i = 0; i < 64; ++i) all_masked.mask_idx.push_back(i);
    CHECK_THROWS_AS(student_forward(m, pb, {all_masked}), std::invalid_argument);
    CHECK_THROWS_AS(student_forward(m, pb, {}), std::invalid_argument);
    PatchBatch two = small_batch(2, 63);
    auto masks = default_masks(2, 64, 65);
    masks[1].vis_idx.pop_back();  // uneven visible counts
    CHECK_THROWS_AS(student_forward(m, two, masks), std::invalid_argument);
  }

  TEST_CASE("gradients reach the patch embedding but not position tables") {
    ModelConfig cfg;
    Rng rng(29);
    auto m = init_model<float>(cfg, rng);
    PatchBatch pb = small_batch(1, 71);
    auto masks = default_masks(1, 64, 73);
    auto out = student_forward(m, pb, masks);
    mean_all(out.recon).backward();
    bool any = false;
    for (float g : m.patch_w.grad()) any = any || g != 0.0f;
    CHECK(any);
    CHECK_FALSE(m.pos_enc.requires_grad());
    CHECK(m.pos_enc.grad().empty());
  }
}
