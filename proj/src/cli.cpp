#include "hpm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "hpm/config.hpp"
#include "hpm/kernels.hpp"
#include "hpm/patch.hpp"
#include "hpm/probe.hpp"
#include "hpm/trainer.hpp"

namespace hpm {

namespace {

namespace fs = std::filesystem;

std::string labels_path_for(const std::string& corpus_path) { return corpus_path + ".labels"; }

void apply_thread_env() {
  const char* env = std::getenv("HPM_THREADS");
  if (!env) return;
  int n = 0;
  try {
    std::size_t used = 0;
    n = std::stoi(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw std::invalid_argument("HPM_THREADS must be a positive integer, got '" +
                                std::string(env) + "'");
  }
  if (n < 1) throw std::invalid_argument("HPM_THREADS must be >= 1");
  kern::set_thread_cap(n);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
}

struct EvalSplit {
  PatchBatch data;
  ImageBatch images;
  std::vector<int> labels;
  std::vector<std::vector<std::int32_t>> textured;
};

EvalSplit load_split(const std::string& corpus_path, i64 patch) {
  EvalSplit s;
  s.images = load_corpus(corpus_path);
  s.data = patchify(s.images, patch);
  load_labels(labels_path_for(corpus_path), s.labels, s.textured);
  if (static_cast<i64>(s.labels.size()) != s.images.b)
    throw std::runtime_error("label count in " + labels_path_for(corpus_path) +
                             " does not match the corpus");
  return s;
}

ReconTarget<float>::Kind target_kind(const TrainConfig& tc) {
  return tc.target == TrainConfig::Target::pixel ? ReconTarget<float>::Kind::pixel
                                                 : ReconTarget<float>::Kind::ema_feature;
}

// ---- gen-corpus ----------------------------------------------------------

struct GenArgs {
  std::string out;
  std::int64_t n = 1000, size = 32, patch = 4, block = 3, classes = 4;
  std::uint64_t seed = 7, texture_seed = 0xA5A5;
  double tile_amp = 0.22, latent_frac = 0.20, noise_frac = 0.15, field_amp = 0.08;
};

int cmd_gen_corpus(const GenArgs& a) {
  SyntheticCorpusSpec spec;
  spec.n_images = a.n;
  spec.h = a.size;
  spec.w = a.size;
  spec.p = a.patch;
  spec.block_ph = a.block;
  spec.block_pw = a.block;
  spec.n_classes = a.classes;
  spec.seed = a.seed;
  spec.texture_seed = a.texture_seed;
  spec.tile_amp = a.tile_amp;
  spec.latent_frac = a.latent_frac;
  spec.noise_frac = a.noise_frac;
  spec.field_amp = a.field_amp;

  fs::create_directories(a.out);
  Corpus corpus = generate_synthetic_corpus(spec);
  const std::string corpus_path = (fs::path(a.out) / "corpus.hpmc").string();
  save_corpus(corpus_path, corpus.images);
  save_labels(labels_path_for(corpus_path), corpus.labels, corpus.textured);

  Config echo;
  echo.set_int("n", a.n);
  echo.set_int("size", a.size);
  echo.set_int("patch", a.patch);
  echo.set_int("block", a.block);
  echo.set_int("classes", a.classes);
  echo.set_int("seed", static_cast<std::int64_t>(a.seed));
  echo.set_int("texture_seed", static_cast<std::int64_t>(a.texture_seed));
  echo.set_double("tile_amp", a.tile_amp);
  echo.set_double("latent_frac", a.latent_frac);
  echo.set_double("noise_frac", a.noise_frac);
  echo.set_double("field_amp", a.field_amp);
  echo.save((fs::path(a.out) / "config.txt").string());

  std::cout << "wrote " << corpus_path << " (" << a.n << " images " << a.size << "x" << a.size
            << "x1)\nwrote " << labels_path_for(corpus_path) << "\n";
  return 0;
}

// ---- pretrain -------------------------------------------------------------

int cmd_pretrain(const Config& merged) {
  TrainConfig tc = train_config_from(merged);
  if (tc.corpus_path.empty()) throw std::invalid_argument("pretrain: --corpus is required");
  if (tc.out_dir.empty()) throw std::invalid_argument("pretrain: --out is required");

  EvalSplit train_split = load_split(tc.corpus_path, tc.arch.patch);
  Trainer tr = make_trainer(tc, train_split.data);
  TrainResult res = run_training(tr, train_split.data, &std::cout);

  ProbeInputs in;
  const std::string eval_path = merged.get_or("eval_corpus", "");
  EvalSplit eval_split =
      eval_path.empty() ? train_split : load_split(eval_path, tr.cfg.arch.patch);
  in.train = std::move(train_split.data);
  in.train_labels = train_split.labels;
  in.eval = eval_split.data;
  in.eval_labels = eval_split.labels;
  in.eval_textured = eval_split.textured;
  in.n_masks = 10;
  in.gamma = tr.cfg.schedule.gamma;
  in.target = target_kind(tr.cfg);
  in.seed = tr.cfg.seed;
  ProbeReport rep = run_probe(tr.student, tr.teacher, in);

  const std::string text = probe_report_text(rep);
  write_text((fs::path(tc.out_dir) / "probe_report.txt").string(), text);
  write_text((fs::path(tc.out_dir) / "probe_report.csv").string(), probe_report_csv(rep));
  std::cout << text << "final checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

// ---- probe ----------------------------------------------------------------

struct ProbeArgs {
  std::string ckpt, corpus, eval_corpus, out;
  std::vector<std::int64_t> ks;
  std::int64_t n_masks = 10;
  std::uint64_t seed = 0;
};

int cmd_probe(const ProbeArgs& a) {
  LoadedModels lm = load_model_pair(a.ckpt);
  EvalSplit train_split = load_split(a.corpus, lm.cfg.arch.patch);
  EvalSplit eval_split =
      a.eval_corpus.empty() ? train_split : load_split(a.eval_corpus, lm.cfg.arch.patch);

  ProbeInputs in;
  if (!a.ks.empty()) {
    for (std::int64_t k : a.ks)
      if (k < 1 || k > train_split.data.b)
        throw std::invalid_argument("probe: k=" + std::to_string(k) +
                                    " outside [1, train size=" +
                                    std::to_string(train_split.data.b) + "]");
    in.ks = a.ks;
  }
  in.train = std::move(train_split.data);
  in.train_labels = train_split.labels;
  in.eval = eval_split.data;
  in.eval_labels = eval_split.labels;
  in.eval_textured = eval_split.textured;
  in.n_masks = a.n_masks;
  in.gamma = lm.cfg.schedule.gamma;
  in.target = target_kind(lm.cfg);
  in.seed = a.seed;

  fs::create_directories(a.out);
  Config echo;
  echo.set("ckpt", a.ckpt);
  echo.set("corpus", a.corpus);
  if (!a.eval_corpus.empty()) echo.set("eval_corpus", a.eval_corpus);
  std::string klist;
  for (std::int64_t k : in.ks) klist += (klist.empty() ? "" : " ") + std::to_string(k);
  echo.set("k", klist);
  echo.set_int("n_masks", a.n_masks);
  echo.set_int("seed", static_cast<std::int64_t>(a.seed));
  echo.save((fs::path(a.out) / "config.txt").string());

  ProbeReport rep = run_probe(lm.student, lm.teacher, in);
  const std::string text = probe_report_text(rep);
  write_text((fs::path(a.out) / "probe_report.txt").string(), text);
  write_text((fs::path(a.out) / "probe_report.csv").string(), probe_report_csv(rep));
  std::cout << text;
  return 0;
}

// ---- heatmap ---------------------------------------------------------------

struct HeatmapArgs {
  std::string ckpt, corpus, out;
  std::vector<std::int64_t> images = {0};
};

int cmd_heatmap(const HeatmapArgs& a) {
  LoadedModels lm = load_model_pair(a.ckpt);
  ImageBatch images = load_corpus(a.corpus);
  PatchBatch data = patchify(images, lm.cfg.arch.patch);
  for (std::int64_t idx : a.images)
    if (idx < 0 || idx >= data.b)
      throw std::invalid_argument("heatmap: image index " + std::to_string(idx) +
                                  " outside [0, " + std::to_string(data.b) + ")");

  fs::create_directories(a.out);
  Config echo;
  echo.set("ckpt", a.ckpt);
  echo.set("corpus", a.corpus);
  std::string ilist;
  for (std::int64_t i : a.images) ilist += (ilist.empty() ? "" : " ") + std::to_string(i);
  echo.set("images", ilist);
  echo.save((fs::path(a.out) / "config.txt").string());

  PatchBatch slice = data;
  slice.b = 1;
  const std::size_t row = static_cast<std::size_t>(data.n * data.d);
  for (std::int64_t idx : a.images) {
    slice.vals.assign(data.vals.begin() + static_cast<std::ptrdiff_t>(idx) *
                                              static_cast<std::ptrdiff_t>(row),
                      data.vals.begin() + static_cast<std::ptrdiff_t>(idx + 1) *
                                              static_cast<std::ptrdiff_t>(row));
    auto tf = teacher_forward(lm.teacher, slice);
    std::span<const float> pred = tf.pred.data();
    const std::string heat_path =
        (fs::path(a.out) / ("img_" + std::to_string(idx) + "_heatmap.pgm")).string();
    const std::string comp_path =
        (fs::path(a.out) / ("img_" + std::to_string(idx) + "_composite.pgm")).string();
    export_heatmap(pred, data.grid_h(), data.grid_w(), data.patch, heat_path);
    export_heatmap_composite(images, idx, pred, data.patch, comp_path);
    std::cout << "wrote " << heat_path << "\nwrote " << comp_path << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
#ifdef __GLIBC__
  // Activation buffers are a few MB and churn every step; without this they
  // each become an mmap/munmap pair. Keeping them on the heap cuts the
  // syscall and page-fault cost of a training epoch by roughly a quarter.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
  CLI::App app{"Masked-image pre-training lab: hard-patch mining at desk scale"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* sub_gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
  sub_gen->add_option("--out", gen.out, "Output directory")->required();
  sub_gen->add_option("--n", gen.n, "Number of images");
  sub_gen->add_option("--size", gen.size, "Image height and width");
  sub_gen->add_option("--patch", gen.patch, "Patch size the block grid is defined on");
  sub_gen->add_option("--block", gen.block, "Textured block side, in patches");
  sub_gen->add_option("--classes", gen.classes, "1 (free placement) or 4 (quadrants)");
  sub_gen->add_option("--seed", gen.seed, "Corpus seed");
  sub_gen->add_option("--texture-seed", gen.texture_seed, "Positional tile dictionary seed");
  sub_gen->add_option("--tile-amp", gen.tile_amp, "Textured-pixel standard deviation");
  sub_gen->add_option("--latent-frac", gen.latent_frac,
                      "Tile variance share driven by the per-image latent");
  sub_gen->add_option("--noise-frac", gen.noise_frac, "Tile variance share that is noise");
  sub_gen->add_option("--field-amp", gen.field_amp, "Background wave amplitude");

  auto* sub_pre = app.add_subcommand("pretrain", "Run masked pre-training");
  std::string cfg_file;
  sub_pre->add_option("--config", cfg_file, "key = value config file; flags override");
  struct Override {
    const char* flag;
    const char* key;
    const char* help;
  };
  // Every ablation axis is a first-class flag; values are parsed and checked
  // by the same code that reads config files.
  static const Override overrides[] = {
      {"--corpus", "corpus", "Training corpus (HPMC)"},
      {"--out", "out_dir", "Output directory"},
      {"--epochs", "epochs", "Training epochs"},
      {"--batch", "batch", "Batch size"},
      {"--base-lr", "base_lr", "Base learning rate (scaled by batch/256)"},
      {"--warmup", "warmup_epochs", "Warmup epochs"},
      {"--weight-decay", "weight_decay", "AdamW weight decay (matrices only)"},
      {"--beta1", "beta1", "Adam beta1"},
      {"--beta2", "beta2", "Adam beta2"},
      {"--ema-momentum", "ema_momentum", "Teacher EMA momentum"},
      {"--seed", "seed", "Run seed"},
      {"--deterministic", "deterministic", "on/off: serial kernels, bit-stable"},
      {"--ckpt-every", "ckpt_every", "Checkpoint every k epochs (0: final only)"},
      {"--target", "target", "pixel | ema-feature"},
      {"--pred-loss", "pred_loss", "relative | absolute | none"},
      {"--learn-to-mask", "learn_to_mask", "on/off: schedule-driven hard masking"},
      {"--gamma", "gamma", "Masked fraction"},
      {"--alpha0", "alpha0", "Schedule start"},
      {"--alphaT", "alphaT", "Schedule end"},
      {"--mask-mode", "mask_mode", "argmax | argmin"},
      {"--direction", "mask_direction", "easy-to-hard | hard-to-easy"},
      {"--patch", "patch", "Patch size"},
      {"--enc-depth", "enc_depth", "Encoder blocks"},
      {"--enc-dim", "enc_dim", "Encoder width"},
      {"--enc-heads", "enc_heads", "Encoder heads"},
      {"--dec-depth", "dec_depth", "Decoder blocks"},
      {"--dec-dim", "dec_dim", "Decoder width"},
      {"--dec-heads", "dec_heads", "Decoder heads"},
      {"--mlp-ratio", "mlp_ratio", "MLP expansion"},
      {"--eval-corpus", "eval_corpus", "Held-out corpus for the final report"},
  };
  std::vector<std::string> override_vals(std::size(overrides));
  std::vector<CLI::Option*> override_opts(std::size(overrides));
  std::size_t pred_idx = 0;
  for (std::size_t i = 0; i < std::size(overrides); ++i) {
    override_opts[i] =
        sub_pre->add_option(overrides[i].flag, override_vals[i], overrides[i].help);
    if (std::string(overrides[i].key) == "pred_loss") pred_idx = i;
  }
  // Historical spelling of the same switch.
  sub_pre->add_option("--loss-pred", override_vals[pred_idx], overrides[pred_idx].help)
      ->excludes(override_opts[pred_idx]);

  ProbeArgs pr;
  auto* sub_probe = app.add_subcommand("probe", "Evaluate a checkpoint");
  sub_probe->add_option("--ckpt", pr.ckpt, "Checkpoint (HPMK)")->required();
  sub_probe->add_option("--corpus", pr.corpus, "Reference corpus for k-NN")->required();
  sub_probe->add_option("--eval-corpus", pr.eval_corpus, "Held-out corpus (default: --corpus)");
  sub_probe->add_option("--out", pr.out, "Output directory")->required();
  sub_probe->add_option("--k", pr.ks, "k values for the k-NN probe");
  sub_probe->add_option("--n-masks", pr.n_masks, "Random masks per image");
  sub_probe->add_option("--seed", pr.seed, "Mask draw seed");

  HeatmapArgs hm;
  auto* sub_heat = app.add_subcommand("heatmap", "Export predicted-loss heatmaps");
  sub_heat->add_option("--ckpt", hm.ckpt, "Checkpoint (HPMK)")->required();
  sub_heat->add_option("--corpus", hm.corpus, "Corpus (HPMC)")->required();
  sub_heat->add_option("--out", hm.out, "Output directory")->required();
  sub_heat->add_option("--images", hm.images, "Image indices");

  try {
    app.parse(argc, argv);
    apply_thread_env();
    if (*sub_gen) return cmd_gen_corpus(gen);
    if (*sub_pre) {
      Config merged = cfg_file.empty() ? Config{} : Config::load(cfg_file);
      for (std::size_t i = 0; i < std::size(overrides); ++i)
        if (override_opts[i]->count() > 0) merged.set(overrides[i].key, override_vals[i]);
      if (sub_pre->count("--loss-pred") > 0) merged.set("pred_loss", override_vals[pred_idx]);
      return cmd_pretrain(merged);
    }
    if (*sub_probe) return cmd_probe(pr);
    if (*sub_heat) return cmd_heatmap(hm);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hpm
