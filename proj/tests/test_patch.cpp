#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hpm/patch.hpp"
#include "hpm/rng.hpp"

using namespace hpm;

namespace {

ImageBatch random_images(std::int64_t b, std::int64_t h, std::int64_t w, std::int64_t c,
                         std::uint64_t seed) {
  ImageBatch img;
  img.b = b;
  img.h = h;
  img.w = w;
  img.c = c;
  img.px.resize(static_cast<std::size_t>(b * h * w * c));
  Rng rng(seed);
  for (float& v : img.px) v = static_cast<float>(rng.uniform());
  return img;
}

std::filesystem::path tmp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_SUITE("patch") {
  TEST_CASE("single 4x4 image with P=4 is one patch equal to the flattened image") {
    ImageBatch img = random_images(1, 4, 4, 1, 11);
    PatchBatch pb = patchify(img, 4);
    CHECK(pb.n == 1);
    CHECK(pb.d == 16);
    REQUIRE(pb.vals.size() == img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) CHECK(pb.vals[i] == img.px[i]);
  }

  TEST_CASE("patch counts and dims for standard geometries") {
    PatchBatch big = patchify(random_images(2, 224, 224, 3, 1), 16);
    CHECK(big.n == 196);
    CHECK(big.d == 768);
    PatchBatch desk = patchify(random_images(3, 32, 32, 1, 2), 4);
    CHECK(desk.n == 64);
    CHECK(desk.d == 16);
    CHECK(desk.grid_h() == 8);
    CHECK(desk.grid_w() == 8);
  }

  TEST_CASE("patchify/unpatchify round-trips are bit-exact") {
    ImageBatch img = random_images(3, 32, 24, 3, 5);
    PatchBatch pb = patchify(img, 4);
    ImageBatch back = unpatchify(pb);
    REQUIRE(back.px.size() == img.px.size());
    CHECK(std::equal(back.px.begin(), back.px.end(), img.px.begin()));
    PatchBatch pb2 = patchify(back, 4);
    CHECK(std::equal(pb2.vals.begin(), pb2.vals.end(), pb.vals.begin()));
  }

  TEST_CASE("patch layout is row-major over the grid and within the patch") {
    // 8x8 image, P=4: patch index 1 is the top-right 4x4 block.
    ImageBatch img = random_images(1, 8, 8, 1, 9);
    PatchBatch pb = patchify(img, 4);
    REQUIRE(pb.n == 4);
    for (std::int64_t py = 0; py < 4; ++py)
      for (std::int64_t px = 0; px < 4; ++px)
        CHECK(pb.vals[1 * pb.d + py * 4 + px] == img.at(0, py, 4 + px, 0));
  }

  TEST_CASE("indivisible image size is rejected") {
    ImageBatch img = random_images(1, 30, 32, 1, 3);
    CHECK_THROWS_AS(patchify(img, 4), std::invalid_argument);
    PatchBatch pb = patchify(random_images(1, 32, 32, 1, 3), 4);
    pb.n = 63;
    CHECK_THROWS_AS(unpatchify(pb), std::invalid_argument);
  }

  TEST_CASE("reported textured set is a contiguous block and free placement reaches {5,6}") {
    // 8x8 image, P=2 -> 4x4 grid; a 1x2 block placed freely. Some seed puts it
    // at grid row 1, cols 1-2, i.e. patches {5,6}.
    SyntheticCorpusSpec spec;
    spec.n_images = 1;
    spec.h = spec.w = 8;
    spec.p = 2;
    spec.block_ph = 1;
    spec.block_pw = 2;
    spec.n_classes = 1;
    bool hit = false;
    for (std::uint64_t seed = 0; seed < 400 && !hit; ++seed) {
      spec.seed = seed;
      Corpus c = generate_synthetic_corpus(spec);
      REQUIRE(c.textured[0].size() == 2);
      // The reported set must be the block rectangle anchored at its minimum.
      const std::int64_t gw = spec.w / spec.p;
      std::set<std::int32_t> reported(c.textured[0].begin(), c.textured[0].end());
      const std::int32_t anchor = *reported.begin();
      std::set<std::int32_t> expect;
      for (std::int64_t by = 0; by < spec.block_ph; ++by)
        for (std::int64_t bx = 0; bx < spec.block_pw; ++bx)
          expect.insert(anchor + static_cast<std::int32_t>(by * gw + bx));
      CHECK(reported == expect);
      CHECK(anchor % gw <= gw - spec.block_pw);  // block never wraps a grid row
      hit = (reported == std::set<std::int32_t>{5, 6});
    }
    CHECK(hit);  // free placement reaches the {5,6} anchor within a few hundred seeds
  }

  TEST_CASE("textured fraction is exactly block area over image area") {
    SyntheticCorpusSpec spec;
    spec.n_images = 8;
    Corpus c = generate_synthetic_corpus(spec);
    const double frac = static_cast<double>(spec.block_ph * spec.block_pw * spec.p * spec.p) /
                        static_cast<double>(spec.h * spec.w);
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
      CHECK(c.textured[i].size() ==
            static_cast<std::size_t>(spec.block_ph * spec.block_pw));
      double textured_px = static_cast<double>(c.textured[i].size() * spec.p * spec.p);
      CHECK(textured_px / static_cast<double>(spec.h * spec.w) == frac);
    }
  }

  TEST_CASE("same spec gives bitwise identical corpora") {
    SyntheticCorpusSpec spec;
    spec.n_images = 16;
    Corpus a = generate_synthetic_corpus(spec);
    Corpus b = generate_synthetic_corpus(spec);
    CHECK(std::equal(a.images.px.begin(), a.images.px.end(), b.images.px.begin()));
    CHECK(a.labels == b.labels);
    CHECK(a.textured == b.textured);
  }

  TEST_CASE("labels are the placement quadrant and stay balanced") {
    SyntheticCorpusSpec spec;
    spec.n_images = 64;
    Corpus c = generate_synthetic_corpus(spec);
    const std::int64_t gh = spec.h / spec.p, gw = spec.w / spec.p;
    int counts[4] = {0, 0, 0, 0};
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
      REQUIRE(c.labels[i] >= 0);
      REQUIRE(c.labels[i] < 4);
      ++counts[c.labels[i]];
      const int qy = c.labels[i] / 2, qx = c.labels[i] % 2;
      for (std::int32_t pi : c.textured[i]) {
        const std::int64_t gy = pi / gw, gx = pi % gw;
        CHECK(gy / (gh / 2) == qy);
        CHECK(gx / (gw / 2) == qx);
      }
    }
    for (int k = 0; k < 4; ++k) CHECK(counts[k] == 16);
  }

  TEST_CASE("quadrant patterns come from texture_seed and are shared across corpora") {
    // With the latent and noise components off, every textured patch is the
    // pure quadrant pattern: identical within an image, across images of the
    // same class, and across corpora built with different image seeds.
    SyntheticCorpusSpec spec;
    spec.n_images = 32;
    spec.latent_frac = 0.0;
    spec.noise_frac = 0.0;
    SyntheticCorpusSpec spec2 = spec;
    spec2.seed = spec.seed + 1;
    Corpus a = generate_synthetic_corpus(spec);
    Corpus b = generate_synthetic_corpus(spec2);
    PatchBatch pa = patchify(a.images, spec.p);
    PatchBatch pb = patchify(b.images, spec.p);
    auto patch_of = [&](const PatchBatch& p, std::int64_t img, std::int32_t pi) {
      return p.vals.data() + (img * p.n + pi) * p.d;
    };
    int matched = 0;
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
      const float* first = patch_of(pa, i, a.textured[i][0]);
      for (std::int32_t pi : a.textured[i])
        for (std::int64_t k = 0; k < pa.d; ++k)
          REQUIRE(patch_of(pa, i, pi)[k] == first[k]);
      for (std::int64_t j = 0; j < spec2.n_images; ++j)
        if (b.labels[j] == a.labels[i]) {
          ++matched;
          const float* other = patch_of(pb, j, b.textured[j][0]);
          for (std::int64_t k = 0; k < pa.d; ++k) REQUIRE(other[k] == first[k]);
        }
    }
    CHECK(matched > 0);
    // Different classes use different patterns.
    const float* q0 = patch_of(pa, 0, a.textured[0][0]);
    const float* q1 = patch_of(pa, 1, a.textured[1][0]);
    REQUIRE(a.labels[0] != a.labels[1]);
    CHECK_FALSE(std::equal(q0, q0 + pa.d, q1));
    // A different texture_seed changes the patterns.
    SyntheticCorpusSpec spec3 = spec;
    spec3.texture_seed = spec.texture_seed + 1;
    Corpus c3 = generate_synthetic_corpus(spec3);
    PatchBatch pc = patchify(c3.images, spec.p);
    CHECK_FALSE(std::equal(q0, q0 + pa.d, patch_of(pc, 0, c3.textured[0][0])));
    // With the latent on, same-class images differ through their latent angle.
    SyntheticCorpusSpec spec4 = spec;
    spec4.latent_frac = 0.20;
    Corpus c4 = generate_synthetic_corpus(spec4);
    PatchBatch p4 = patchify(c4.images, spec.p);
    REQUIRE(c4.labels[0] == c4.labels[4]);
    CHECK_FALSE(std::equal(patch_of(p4, 0, c4.textured[0][0]),
                           patch_of(p4, 0, c4.textured[0][0]) + p4.d,
                           patch_of(p4, 4, c4.textured[4][0])));
  }

  TEST_CASE("textured patches are rough, background patches are smooth, pixels stay in [0,1]") {
    // Background is a wave with wavelength >= 16 px and amplitude field_amp, so
    // its mean adjacent-pixel delta is bounded by field_amp * 2*pi/16 ~ 0.031.
    // Textured pixels are independent draws with std tile_amp, so their mean
    // adjacent delta sits near 0.25. The gap classifies every patch.
    SyntheticCorpusSpec spec;
    spec.n_images = 16;
    Corpus c = generate_synthetic_corpus(spec);
    PatchBatch pb = patchify(c.images, spec.p);
    auto roughness = [&](const float* v) {
      double sum = 0.0;
      int cnt = 0;
      for (std::int64_t py = 0; py < spec.p; ++py)
        for (std::int64_t px = 0; px < spec.p; ++px) {
          if (px + 1 < spec.p) {
            sum += std::abs(v[py * spec.p + px + 1] - v[py * spec.p + px]);
            ++cnt;
          }
          if (py + 1 < spec.p) {
            sum += std::abs(v[(py + 1) * spec.p + px] - v[py * spec.p + px]);
            ++cnt;
          }
        }
      return sum / cnt;
    };
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
      std::set<std::int32_t> tex(c.textured[i].begin(), c.textured[i].end());
      for (std::int64_t pi = 0; pi < pb.n; ++pi) {
        const float* v = pb.vals.data() + (i * pb.n + pi) * pb.d;
        const double r = roughness(v);
        if (tex.count(static_cast<std::int32_t>(pi)))
          CHECK(r > 0.10);
        else
          CHECK(r < 0.05);
        for (std::int64_t k = 0; k < pb.d; ++k) {
          CHECK(v[k] >= 0.0f);
          CHECK(v[k] <= 1.0f);
        }
      }
    }
    // With the field off, background patches degenerate to an exact constant.
    SyntheticCorpusSpec flat = spec;
    flat.n_images = 4;
    flat.field_amp = 0.0;
    Corpus cf = generate_synthetic_corpus(flat);
    PatchBatch pf = patchify(cf.images, flat.p);
    for (std::int64_t i = 0; i < flat.n_images; ++i) {
      std::set<std::int32_t> tex(cf.textured[i].begin(), cf.textured[i].end());
      for (std::int64_t pi = 0; pi < pf.n; ++pi) {
        if (tex.count(static_cast<std::int32_t>(pi))) continue;
        const float* v = pf.vals.data() + (i * pf.n + pi) * pf.d;
        for (std::int64_t k = 1; k < pf.d; ++k) CHECK(v[k] == v[0]);
      }
    }
  }

  TEST_CASE("corpus spec validation") {
    SyntheticCorpusSpec spec;
    spec.block_ph = 5;  // quadrant is 4x4 patches for the default geometry
    CHECK_THROWS_AS(generate_synthetic_corpus(spec), std::invalid_argument);
    SyntheticCorpusSpec spec2;
    spec2.block_ph = 20;
    spec2.n_classes = 1;
    CHECK_THROWS_AS(generate_synthetic_corpus(spec2), std::invalid_argument);
    SyntheticCorpusSpec spec3;
    spec3.n_classes = 3;
    CHECK_THROWS_AS(generate_synthetic_corpus(spec3), std::invalid_argument);
  }

  TEST_CASE("HPMC save/load round-trips bitwise") {
    ImageBatch img = random_images(5, 16, 12, 2, 21);
    const auto path = tmp_file("hpm_test_corpus.hpmc");
    save_corpus(path.string(), img);
    ImageBatch back = load_corpus(path.string());
    CHECK(back.b == img.b);
    CHECK(back.h == img.h);
    CHECK(back.w == img.w);
    CHECK(back.c == img.c);
    REQUIRE(back.px.size() == img.px.size());
    CHECK(std::equal(back.px.begin(), back.px.end(), img.px.begin()));
    std::filesystem::remove(path);
  }

  TEST_CASE("truncated or corrupt HPMC files are rejected") {
    ImageBatch img = random_images(2, 8, 8, 1, 22);
    const auto path = tmp_file("hpm_test_trunc.hpmc");
    save_corpus(path.string(), img);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 7);
    CHECK_THROWS_AS(load_corpus(path.string()), std::runtime_error);
    std::filesystem::resize_file(path, 10);  // inside the header
    CHECK_THROWS_AS(load_corpus(path.string()), std::runtime_error);
    {
      std::ofstream f(path, std::ios::binary);
      f << "JUNKJUNKJUNKJUNKJUNK";
    }
    CHECK_THROWS_AS(load_corpus(path.string()), std::runtime_error);
    CHECK_THROWS_AS(load_corpus((path.string() + ".missing")), std::runtime_error);
    std::filesystem::remove(path);
  }

  TEST_CASE("labels sidecar round-trips") {
    std::vector<int> labels = {2, 0, 1};
    std::vector<std::vector<std::int32_t>> tex = {{5, 6}, {}, {0, 1, 8}};
    const auto path = tmp_file("hpm_test_labels.txt");
    save_labels(path.string(), labels, tex);
    std::vector<int> l2;
    std::vector<std::vector<std::int32_t>> t2;
    load_labels(path.string(), l2, t2);
    CHECK(l2 == labels);
    CHECK(t2 == tex);
    std::filesystem::remove(path);
  }

  TEST_CASE("PGM import maps 8-bit values to [0,1]") {
    const auto path = tmp_file("hpm_test_img.pgm");
    std::vector<std::uint8_t> gray = {0, 255, 128, 64, 255, 0};
    write_pgm(path.string(), 3, 2, gray);
    ImageBatch img = load_pnm(path.string());
    CHECK(img.b == 1);
    CHECK(img.h == 2);
    CHECK(img.w == 3);
    CHECK(img.c == 1);
    CHECK(img.px[0] == 0.0f);
    CHECK(img.px[1] == 1.0f);
    CHECK(img.px[2] == doctest::Approx(128.0 / 255.0));
    std::int64_t w = 0, h = 0;
    std::vector<std::uint8_t> back = read_pgm(path.string(), w, h);
    CHECK(w == 3);
    CHECK(h == 2);
    CHECK(back == gray);
    std::filesystem::remove(path);
  }

  TEST_CASE("PPM import and header comments") {
    const auto path = tmp_file("hpm_test_img.ppm");
    {
      std::ofstream f(path, std::ios::binary);
      f << "P6\n# a comment line\n2 1\n# another\n255\n";
      const std::uint8_t px[6] = {255, 0, 0, 0, 0, 255};
      f.write(reinterpret_cast<const char*>(px), 6);
    }
    ImageBatch img = load_pnm(path.string());
    CHECK(img.c == 3);
    CHECK(img.px[0] == 1.0f);
    CHECK(img.px[1] == 0.0f);
    CHECK(img.px[5] == 1.0f);
    // 16-bit maxval rejected
    {
      std::ofstream f(path, std::ios::binary);
      f << "P5\n2 1\n65535\n";
      f << "xxxx";
    }
    CHECK_THROWS_AS(load_pnm(path.string()), std::runtime_error);
    std::filesystem::remove(path);
  }
}
