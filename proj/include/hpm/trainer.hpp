#pragma once

// Pre-training loop: per step the teacher scores the full batch, masks are
// drawn from the easy-to-hard schedule, the student reconstructs and predicts
// its own losses, AdamW updates the student and EMA updates the teacher.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hpm/config.hpp"
#include "hpm/ema.hpp"
#include "hpm/masking.hpp"
#include "hpm/objectives.hpp"
#include "hpm/patch.hpp"
#include "hpm/rng.hpp"
#include "hpm/vit.hpp"

namespace hpm {

struct TrainConfig {
  ModelConfig arch;        // recon_dim derived from target below
  MaskSchedule schedule;   // total_epochs mirrors epochs
  enum class Target { pixel, ema_feature } target = Target::pixel;
  enum class Pred { relative, absolute, none } pred_loss = Pred::relative;
  bool learn_to_mask = true;

  std::int64_t epochs = 100;
  std::int64_t batch = 64;
  double base_lr = 4e-3;  // effective lr = base_lr * batch / 256; sized for
                          // desk-scale runs (1500 steps), not ImageNet epochs
  std::int64_t warmup_epochs = 5;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.95;
  double adam_eps = 1e-8;
  double ema_momentum = 0.996;
  std::uint64_t seed = 42;
  bool deterministic = false;
  std::int64_t ckpt_every = 25;  // epochs; 0 = final checkpoint only
  std::string corpus_path;       // recorded for reproducibility
  std::string out_dir;

  // Test instrumentation: affine map applied to the detached per-patch
  // losses consumed by the prediction objective (never the gradient path).
  double lrec_scale = 1.0, lrec_shift = 0.0;

  double effective_lr() const { return base_lr * static_cast<double>(batch) / 256.0; }
  void validate() const;
};

Config to_config(const TrainConfig& tc);
TrainConfig train_config_from(const Config& cfg);

// Warmup from zero over warmup_steps, then cosine to zero at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
             double lr_max);

// One AdamW update with bias correction (t counts this update, starting at 1)
// and decoupled weight decay.
void adamw_update(std::span<float> p, std::span<const float> g, std::vector<float>& m,
                  std::vector<float>& v, std::uint64_t t, double lr, double beta1, double beta2,
                  double eps, double wd);

struct AdamW {
  std::unordered_map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments;
  std::uint64_t t = 0;

  // Weight decay applies to matrices only; vectors (biases, norms, tokens)
  // are excluded.
  void step(HpmModel<float>& model, double lr, double wd, double beta1, double beta2, double eps);
};

struct StepMetrics {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lrec = 0;
  double lpred = 0;
  double alpha = 0;
  double spearman = 0;  // mean over images: student prediction vs measured loss
};

struct Trainer {
  TrainConfig cfg;
  HpmModel<float> student;
  HpmModel<float> teacher;
  EmaState ema;
  AdamW opt;
  Rng rng_data{0}, rng_mask{0}, rng_init{0};
  std::int64_t epochs_done = 0;
  std::int64_t global_step = 0;
  std::int64_t steps_per_epoch = 0, total_steps = 0, warmup_steps = 0;
};

// Fresh trainer; model geometry comes from the corpus batch.
Trainer make_trainer(TrainConfig cfg, const PatchBatch& data);

// Rebuilds a trainer from a checkpoint (config text, parameters, moments,
// RNG streams, progress counters).
Trainer resume_trainer(const std::string& ckpt_path, const PatchBatch& data);

// Models only, for evaluation: no optimizer state, no corpus required.
struct LoadedModels {
  TrainConfig cfg;
  HpmModel<float> student;
  HpmModel<float> teacher;
  std::int64_t epochs_done = 0;
};
LoadedModels load_model_pair(const std::string& ckpt_path);

void save_trainer_checkpoint(const Trainer& tr, const std::string& path);

// One optimizer step on an assembled batch at schedule position epoch_t.
// Aborts with a diagnostic dump in cfg.out_dir if the loss turns non-finite.
StepMetrics train_step(Trainer& tr, const PatchBatch& batch, std::int64_t epoch_t);

struct TrainResult {
  std::vector<double> epoch_mean_lrec;
  std::vector<double> epoch_mean_lpred;
  std::string final_checkpoint;
  std::string metrics_path;
};

// Full run: epochs_done .. cfg.epochs. Writes metrics.csv, config.txt and
// checkpoints under cfg.out_dir. log_stream may be null for silence.
TrainResult run_training(Trainer& tr, const PatchBatch& data, std::ostream* log_stream);

}  // namespace hpm
