#include "hpm/patch.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hpm/rng.hpp"

namespace hpm {

PatchBatch patchify(const ImageBatch& images, std::int64_t p) {
  if (p <= 0) throw std::invalid_argument("patchify: patch size must be positive");
  if (images.b <= 0 || images.h <= 0 || images.w <= 0 || images.c <= 0)
    throw std::invalid_argument("patchify: empty image batch");
  if (images.h % p != 0 || images.w % p != 0)
    throw std::invalid_argument("patchify: image size " + std::to_string(images.h) + "x" +
                                std::to_string(images.w) + " not divisible by patch " +
                                std::to_string(p));
  PatchBatch out;
  out.b = images.b;
  out.img_h = images.h;
  out.img_w = images.w;
  out.patch = p;
  out.channels = images.c;
  const std::int64_t gh = images.h / p, gw = images.w / p;
  out.n = gh * gw;
  out.d = p * p * images.c;
  out.vals.resize(static_cast<std::size_t>(out.b * out.n * out.d));
  for (std::int64_t bi = 0; bi < out.b; ++bi)
    for (std::int64_t gy = 0; gy < gh; ++gy)
      for (std::int64_t gx = 0; gx < gw; ++gx) {
        float* dst = out.vals.data() + ((bi * out.n + gy * gw + gx) * out.d);
        for (std::int64_t py = 0; py < p; ++py)
          for (std::int64_t px = 0; px < p; ++px)
            for (std::int64_t ci = 0; ci < images.c; ++ci)
              *dst++ = images.at(bi, gy * p + py, gx * p + px, ci);
      }
  return out;
}

ImageBatch unpatchify(const PatchBatch& patches) {
  const std::int64_t p = patches.patch;
  if (p <= 0 || patches.img_h % p != 0 || patches.img_w % p != 0)
    throw std::invalid_argument("unpatchify: bad geometry");
  const std::int64_t gh = patches.img_h / p, gw = patches.img_w / p;
  if (patches.n != gh * gw || patches.d != p * p * patches.channels)
    throw std::invalid_argument("unpatchify: n/d inconsistent with geometry");
  if (patches.vals.size() != static_cast<std::size_t>(patches.b * patches.n * patches.d))
    throw std::invalid_argument("unpatchify: value buffer size mismatch");
  ImageBatch out;
  out.b = patches.b;
  out.h = patches.img_h;
  out.w = patches.img_w;
  out.c = patches.channels;
  out.px.resize(static_cast<std::size_t>(out.b * out.h * out.w * out.c));
  for (std::int64_t bi = 0; bi < out.b; ++bi)
    for (std::int64_t gy = 0; gy < gh; ++gy)
      for (std::int64_t gx = 0; gx < gw; ++gx) {
        const float* src = patches.vals.data() + ((bi * patches.n + gy * gw + gx) * patches.d);
        for (std::int64_t py = 0; py < p; ++py)
          for (std::int64_t px = 0; px < p; ++px)
            for (std::int64_t ci = 0; ci < out.c; ++ci)
              out.at(bi, gy * p + py, gx * p + px, ci) = *src++;
      }
  return out;
}

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  if (spec.n_images <= 0) throw std::invalid_argument("corpus: n_images must be positive");
  if (spec.p <= 0 || spec.h % spec.p != 0 || spec.w % spec.p != 0)
    throw std::invalid_argument("corpus: image size not divisible by patch");
  const std::int64_t gh = spec.h / spec.p, gw = spec.w / spec.p;
  if (spec.block_ph <= 0 || spec.block_pw <= 0 || spec.block_ph > gh || spec.block_pw > gw)
    throw std::invalid_argument("corpus: block does not fit in the patch grid");
  if (spec.n_classes != 1 && spec.n_classes != 4)
    throw std::invalid_argument("corpus: n_classes must be 1 (free placement) or 4 (quadrants)");
  if (spec.n_classes == 4) {
    if (gh % 2 != 0 || gw % 2 != 0)
      throw std::invalid_argument("corpus: quadrant placement needs an even patch grid");
    if (spec.block_ph > gh / 2 || spec.block_pw > gw / 2)
      throw std::invalid_argument("corpus: block does not fit inside one quadrant");
  }
  if (spec.tile_amp <= 0.0) throw std::invalid_argument("corpus: tile_amp must be positive");
  if (spec.latent_frac < 0.0 || spec.noise_frac < 0.0 ||
      spec.latent_frac + spec.noise_frac > 1.0)
    throw std::invalid_argument("corpus: latent_frac/noise_frac must be >= 0 and sum to <= 1");
  if (spec.field_amp < 0.0) throw std::invalid_argument("corpus: field_amp must be >= 0");

  // Quadrant patterns are a function of texture_seed alone, so corpora built
  // with different image seeds (train vs held-out) share them. Per quadrant:
  // base pattern T, then the latent pair A, B. Entries are unit variance.
  const std::int64_t tile_d = spec.p * spec.p;
  const double kUnit = std::sqrt(3.0);  // uniform(-1,1) has variance 1/3
  std::vector<double> base(static_cast<std::size_t>(4 * tile_d));
  std::vector<double> lat_a(static_cast<std::size_t>(4 * tile_d));
  std::vector<double> lat_b(static_cast<std::size_t>(4 * tile_d));
  {
    Rng trng = Rng::stream(spec.texture_seed, 0);
    for (std::int64_t q = 0; q < 4; ++q) {
      for (std::int64_t j = 0; j < tile_d; ++j)
        base[q * tile_d + j] = kUnit * trng.uniform(-1.0, 1.0);
      for (std::int64_t j = 0; j < tile_d; ++j)
        lat_a[q * tile_d + j] = kUnit * trng.uniform(-1.0, 1.0);
      for (std::int64_t j = 0; j < tile_d; ++j)
        lat_b[q * tile_d + j] = kUnit * trng.uniform(-1.0, 1.0);
    }
  }
  const double s_base = std::sqrt(1.0 - spec.latent_frac - spec.noise_frac);
  const double s_lat = std::sqrt(spec.latent_frac);
  const double s_noise = std::sqrt(spec.noise_frac);

  Corpus out;
  out.images.b = spec.n_images;
  out.images.h = spec.h;
  out.images.w = spec.w;
  out.images.c = 1;
  out.images.px.assign(static_cast<std::size_t>(spec.n_images * spec.h * spec.w), 0.0f);
  out.labels.resize(static_cast<std::size_t>(spec.n_images));
  out.textured.resize(static_cast<std::size_t>(spec.n_images));

  constexpr double kTwoPi = 6.283185307179586;
  Rng master = Rng::stream(spec.seed, 0);
  for (std::int64_t i = 0; i < spec.n_images; ++i) {
    const int label = static_cast<int>(i % spec.n_classes);
    const double bg = master.uniform(0.35, 0.65);
    std::int64_t ay, ax;  // block anchor in patch coordinates
    if (spec.n_classes == 4) {
      const std::int64_t qy = label / 2, qx = label % 2;
      const std::int64_t hh = gh / 2, hw = gw / 2;
      ay = qy * hh + static_cast<std::int64_t>(master.randint(
                         static_cast<std::uint64_t>(hh - spec.block_ph + 1)));
      ax = qx * hw + static_cast<std::int64_t>(master.randint(
                         static_cast<std::uint64_t>(hw - spec.block_pw + 1)));
    } else {
      ay = static_cast<std::int64_t>(
          master.randint(static_cast<std::uint64_t>(gh - spec.block_ph + 1)));
      ax = static_cast<std::int64_t>(
          master.randint(static_cast<std::uint64_t>(gw - spec.block_pw + 1)));
    }
    // Background wave: random orientation, wavelength 16..32 px, random phase.
    const double beta = master.uniform(0.0, kTwoPi);
    const double lambda = master.uniform(16.0, 32.0);
    const double phase = master.uniform(0.0, kTwoPi);
    const double kx = kTwoPi * std::cos(beta) / lambda;
    const double ky = kTwoPi * std::sin(beta) / lambda;
    const double theta = master.uniform(0.0, kTwoPi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const std::uint64_t img_seed = master.next_u64();
    Rng irng(img_seed);

    // Pattern quadrant: the block's quadrant under quadrant placement, the
    // anchor's quadrant under free placement.
    const std::int64_t q = (gh >= 2 ? (ay * 2) / gh : 0) * 2 + (gw >= 2 ? (ax * 2) / gw : 0);
    const double* tq = base.data() + q * tile_d;
    const double* aq = lat_a.data() + q * tile_d;
    const double* bq = lat_b.data() + q * tile_d;

    out.labels[i] = label;
    for (std::int64_t y = 0; y < spec.h; ++y)
      for (std::int64_t x = 0; x < spec.w; ++x) {
        const double v = bg + spec.field_amp * std::sin(kx * static_cast<double>(x) +
                                                        ky * static_cast<double>(y) + phase);
        out.images.at(i, y, x, 0) = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
      }
    for (std::int64_t by = 0; by < spec.block_ph; ++by)
      for (std::int64_t bx = 0; bx < spec.block_pw; ++bx) {
        const std::int64_t gy = ay + by, gx = ax + bx;
        out.textured[i].push_back(static_cast<std::int32_t>(gy * gw + gx));
        for (std::int64_t py = 0; py < spec.p; ++py)
          for (std::int64_t px = 0; px < spec.p; ++px) {
            const std::int64_t j = py * spec.p + px;
            const double e = kUnit * irng.uniform(-1.0, 1.0);
            const double mix = s_base * tq[j] + s_lat * (ct * aq[j] + st * bq[j]) + s_noise * e;
            const double v = 0.5 + spec.tile_amp * mix;
            out.images.at(i, gy * spec.p + py, gx * spec.p + px, 0) =
                static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
          }
      }
  }
  return out;
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& f, const char* what) {
  std::uint32_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error(std::string("corpus file truncated reading ") + what);
  return v;
}

constexpr std::uint32_t kCorpusVersion = 1;

}  // namespace

void save_corpus(const std::string& path, const ImageBatch& images) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write("HPMC", 4);
  write_u32(f, kCorpusVersion);
  write_u32(f, static_cast<std::uint32_t>(images.b));
  write_u32(f, static_cast<std::uint32_t>(images.h));
  write_u32(f, static_cast<std::uint32_t>(images.w));
  write_u32(f, static_cast<std::uint32_t>(images.c));
  f.write(reinterpret_cast<const char*>(images.px.data()),
          static_cast<std::streamsize>(images.px.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

ImageBatch load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4] = {};
  if (!f.read(magic, 4) || std::memcmp(magic, "HPMC", 4) != 0)
    throw std::runtime_error("not an HPMC corpus file: " + path);
  const std::uint32_t version = read_u32(f, "version");
  if (version != kCorpusVersion)
    throw std::runtime_error("unsupported HPMC version " + std::to_string(version));
  ImageBatch out;
  out.b = read_u32(f, "image count");
  out.h = read_u32(f, "height");
  out.w = read_u32(f, "width");
  out.c = read_u32(f, "channels");
  if (out.b <= 0 || out.h <= 0 || out.w <= 0 || out.c <= 0)
    throw std::runtime_error("HPMC header has zero dimension: " + path);
  const std::size_t count = static_cast<std::size_t>(out.b * out.h * out.w * out.c);
  out.px.resize(count);
  if (!f.read(reinterpret_cast<char*>(out.px.data()),
              static_cast<std::streamsize>(count * sizeof(float))))
    throw std::runtime_error("corpus file truncated reading pixels: " + path);
  return out;
}

void save_labels(const std::string& path, const std::vector<int>& labels,
                 const std::vector<std::vector<std::int32_t>>& textured) {
  if (labels.size() != textured.size())
    throw std::invalid_argument("save_labels: labels/textured size mismatch");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f << labels[i];
    for (std::int32_t idx : textured[i]) f << ' ' << idx;
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void load_labels(const std::string& path, std::vector<int>& labels,
                 std::vector<std::vector<std::int32_t>>& textured) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  labels.clear();
  textured.clear();
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int label;
    if (!(ss >> label)) throw std::runtime_error("bad label line in " + path);
    labels.push_back(label);
    std::vector<std::int32_t> idx;
    std::int32_t v;
    while (ss >> v) idx.push_back(v);
    textured.push_back(std::move(idx));
  }
}

namespace {

// Reads one whitespace-delimited PNM token, skipping '#' comments.
std::string pnm_token(std::istream& f) {
  std::string tok;
  int ch;
  while ((ch = f.get()) != EOF) {
    if (ch == '#') {
      while ((ch = f.get()) != EOF && ch != '\n') {
      }
    } else if (!std::isspace(ch)) {
      tok.push_back(static_cast<char>(ch));
      while ((ch = f.get()) != EOF && !std::isspace(ch) && ch != '#')
        tok.push_back(static_cast<char>(ch));
      if (ch == '#') f.unget();
      return tok;
    }
  }
  throw std::runtime_error("PNM file truncated in header");
}

}  // namespace

ImageBatch load_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::string magic = pnm_token(f);
  std::int64_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw std::runtime_error("unsupported PNM magic '" + magic + "' in " + path);
  const std::int64_t w = std::stoll(pnm_token(f));
  const std::int64_t h = std::stoll(pnm_token(f));
  const std::int64_t maxval = std::stoll(pnm_token(f));
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PNM dimensions in " + path);
  if (maxval != 255) throw std::runtime_error("only 8-bit PNM supported: " + path);
  const std::size_t count = static_cast<std::size_t>(w * h * channels);
  std::vector<std::uint8_t> raw(count);
  if (!f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count)))
    throw std::runtime_error("PNM file truncated reading pixels: " + path);
  ImageBatch out;
  out.b = 1;
  out.h = h;
  out.w = w;
  out.c = channels;
  out.px.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.px[i] = static_cast<float>(raw[i]) / 255.0f;
  return out;
}

void write_pgm(const std::string& path, std::int64_t w, std::int64_t h,
               std::span<const std::uint8_t> gray) {
  if (static_cast<std::int64_t>(gray.size()) != w * h)
    throw std::invalid_argument("write_pgm: buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, std::int64_t& w, std::int64_t& h) {
  ImageBatch img = load_pnm(path);
  if (img.c != 1) throw std::runtime_error("not a PGM: " + path);
  w = img.w;
  h = img.h;
  std::vector<std::uint8_t> out(img.px.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(img.px[i] * 255.0f + 0.5f);
  return out;
}

}  // namespace hpm
