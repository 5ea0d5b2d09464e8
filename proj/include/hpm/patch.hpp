#pragma once

// Image corpus plumbing: image <-> patch-sequence conversion, the synthetic
// corpus with known-hard regions, and the raw file formats (HPMC corpus,
// PGM/PPM import, PGM export used by heatmaps).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hpm {

struct ImageBatch {
  std::int64_t b = 0, h = 0, w = 0, c = 0;
  std::vector<float> px;  // [b, h, w, c] row-major, values in [0,1]

  float& at(std::int64_t bi, std::int64_t y, std::int64_t x, std::int64_t ci) {
    return px[((bi * h + y) * w + x) * c + ci];
  }
  float at(std::int64_t bi, std::int64_t y, std::int64_t x, std::int64_t ci) const {
    return px[((bi * h + y) * w + x) * c + ci];
  }
};

struct PatchBatch {
  std::int64_t b = 0, n = 0, d = 0;
  std::int64_t img_h = 0, img_w = 0, patch = 0, channels = 0;
  std::vector<float> vals;  // [b, n, d]; patches row-major over the grid,
                            // each patch flattened row-major channel-last

  std::int64_t grid_h() const { return img_h / patch; }
  std::int64_t grid_w() const { return img_w / patch; }
};

PatchBatch patchify(const ImageBatch& images, std::int64_t p);
ImageBatch unpatchify(const PatchBatch& patches);

// Synthetic images: a smooth background wave plus one block of textured
// patches. Textured pixels mix three unit-variance parts: a quadrant-keyed
// base pattern (learnable from position alone), a per-image latent expressed
// through two more quadrant-keyed patterns (recoverable only by looking at a
// visible textured patch), and per-pixel noise (irreducible). The background
// wave's orientation and phase are per-image, so flat patches are
// reconstructable exactly when the wave is inferred from visible ones. All
// fixed patterns derive from texture_seed alone and are shared across corpora
// (train vs held-out). The label is the block's quadrant.
struct SyntheticCorpusSpec {
  std::int64_t n_images = 1000;
  std::int64_t h = 32, w = 32;
  std::int64_t p = 4;
  std::int64_t block_ph = 3, block_pw = 3;  // block size in patches
  std::int64_t n_classes = 4;               // 4 = quadrant placement, 1 = free
  std::uint64_t seed = 7;
  std::uint64_t texture_seed = 0xA5A5;  // shared across train/held-out splits
  double tile_amp = 0.22;     // textured-pixel standard deviation
  double latent_frac = 0.20;  // share of tile variance driven by the image latent
  double noise_frac = 0.15;   // share that is per-pixel noise
  double field_amp = 0.08;    // background wave amplitude
};

struct Corpus {
  ImageBatch images;
  std::vector<int> labels;                         // per image
  std::vector<std::vector<std::int32_t>> textured;  // per image, ascending patch indices
};

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

// HPMC: magic "HPMC", u32 version, u32 B/H/W/C, f32 little-endian pixels.
void save_corpus(const std::string& path, const ImageBatch& images);
ImageBatch load_corpus(const std::string& path);

// Label sidecar: one line per image, "label idx idx ...".
void save_labels(const std::string& path, const std::vector<int>& labels,
                 const std::vector<std::vector<std::int32_t>>& textured);
void load_labels(const std::string& path, std::vector<int>& labels,
                 std::vector<std::vector<std::int32_t>>& textured);

// PGM (P5) / PPM (P6) import, 8-bit maxval only; pixel value 255 -> 1.0.
ImageBatch load_pnm(const std::string& path);

// 8-bit binary PGM write/read used by heatmap export and its tests.
void write_pgm(const std::string& path, std::int64_t w, std::int64_t h,
               std::span<const std::uint8_t> gray);
std::vector<std::uint8_t> read_pgm(const std::string& path, std::int64_t& w, std::int64_t& h);

}  // namespace hpm
