#include "hpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "hpm/checkpoint.hpp"
#include "hpm/kernels.hpp"
#include "hpm/stats.hpp"

namespace hpm {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs < 1");
  if (batch < 1) throw std::invalid_argument("train config: batch < 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw std::invalid_argument("train config: warmup must be in [0, epochs)");
  if (base_lr <= 0) throw std::invalid_argument("train config: base_lr must be positive");
  if (weight_decay < 0) throw std::invalid_argument("train config: negative weight decay");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("train config: betas must be in [0,1)");
  if (adam_eps <= 0) throw std::invalid_argument("train config: adam_eps must be positive");
  if (ema_momentum < 0 || ema_momentum > 1)
    throw std::invalid_argument("train config: ema momentum outside [0,1]");
  if (ckpt_every < 0) throw std::invalid_argument("train config: ckpt_every < 0");
  if (schedule.gamma <= 0 || schedule.gamma >= 1)
    throw std::invalid_argument("train config: gamma must be in (0,1)");
  if (schedule.alpha0 < 0 || schedule.alpha0 > 1 || schedule.alphaT < 0 || schedule.alphaT > 1)
    throw std::invalid_argument("train config: alpha endpoints outside [0,1]");
  if (lrec_scale <= 0) throw std::invalid_argument("train config: lrec_scale must be positive");
}

namespace {

const char* target_name(TrainConfig::Target t) {
  return t == TrainConfig::Target::pixel ? "pixel" : "ema-feature";
}
const char* pred_name(TrainConfig::Pred p) {
  switch (p) {
    case TrainConfig::Pred::relative: return "relative";
    case TrainConfig::Pred::absolute: return "absolute";
    default: return "none";
  }
}
const char* mode_name(MaskSchedule::Mode m) {
  return m == MaskSchedule::Mode::argmax ? "argmax" : "argmin";
}
const char* direction_name(MaskSchedule::Direction d) {
  return d == MaskSchedule::Direction::easy_to_hard ? "easy-to-hard" : "hard-to-easy";
}

}  // namespace

Config to_config(const TrainConfig& tc) {
  Config c;
  c.set("corpus", tc.corpus_path);
  c.set("out_dir", tc.out_dir);
  c.set_int("epochs", tc.epochs);
  c.set_int("batch", tc.batch);
  c.set_double("base_lr", tc.base_lr);
  c.set_int("warmup_epochs", tc.warmup_epochs);
  c.set_double("weight_decay", tc.weight_decay);
  c.set_double("beta1", tc.beta1);
  c.set_double("beta2", tc.beta2);
  c.set_double("adam_eps", tc.adam_eps);
  c.set_double("ema_momentum", tc.ema_momentum);
  c.set_int("seed", static_cast<std::int64_t>(tc.seed));
  c.set_bool("deterministic", tc.deterministic);
  c.set_int("ckpt_every", tc.ckpt_every);
  c.set("target", target_name(tc.target));
  c.set("pred_loss", pred_name(tc.pred_loss));
  c.set_bool("learn_to_mask", tc.learn_to_mask);
  c.set_double("gamma", tc.schedule.gamma);
  c.set_double("alpha0", tc.schedule.alpha0);
  c.set_double("alphaT", tc.schedule.alphaT);
  c.set("mask_mode", mode_name(tc.schedule.mode));
  c.set("mask_direction", direction_name(tc.schedule.direction));
  c.set_int("patch", tc.arch.patch);
  c.set_int("img_h", tc.arch.img_h);
  c.set_int("img_w", tc.arch.img_w);
  c.set_int("channels", tc.arch.channels);
  c.set_int("enc_depth", tc.arch.enc_depth);
  c.set_int("enc_dim", tc.arch.enc_dim);
  c.set_int("enc_heads", tc.arch.enc_heads);
  c.set_int("dec_depth", tc.arch.dec_depth);
  c.set_int("dec_dim", tc.arch.dec_dim);
  c.set_int("dec_heads", tc.arch.dec_heads);
  c.set_int("mlp_ratio", tc.arch.mlp_ratio);
  c.set_double("lrec_scale", tc.lrec_scale);
  c.set_double("lrec_shift", tc.lrec_shift);
  return c;
}

TrainConfig train_config_from(const Config& cfg) {
  static const std::vector<std::string> known = {
      "corpus",      "out_dir",      "epochs",        "batch",        "base_lr",
      "warmup_epochs", "weight_decay", "beta1",       "beta2",        "adam_eps",
      "ema_momentum", "seed",        "deterministic", "ckpt_every",   "target",
      "pred_loss",   "learn_to_mask", "gamma",        "alpha0",       "alphaT",
      "mask_mode",   "mask_direction", "patch",       "img_h",        "img_w",
      "channels",    "enc_depth",   "enc_dim",       "enc_heads",    "dec_depth",
      "dec_dim",     "dec_heads",   "mlp_ratio",     "lrec_scale",   "lrec_shift",
      "eval_corpus", "threads"};  // the last two belong to the command line layer
  for (const auto& [k, v] : cfg.entries())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument("config: unknown key '" + k + "'");

  TrainConfig tc;
  tc.corpus_path = cfg.get_or("corpus", "");
  tc.out_dir = cfg.get_or("out_dir", "");
  if (cfg.has("epochs")) tc.epochs = cfg.get_int("epochs");
  if (cfg.has("batch")) tc.batch = cfg.get_int("batch");
  if (cfg.has("base_lr")) tc.base_lr = cfg.get_double("base_lr");
  if (cfg.has("warmup_epochs")) tc.warmup_epochs = cfg.get_int("warmup_epochs");
  if (cfg.has("weight_decay")) tc.weight_decay = cfg.get_double("weight_decay");
  if (cfg.has("beta1")) tc.beta1 = cfg.get_double("beta1");
  if (cfg.has("beta2")) tc.beta2 = cfg.get_double("beta2");
  if (cfg.has("adam_eps")) tc.adam_eps = cfg.get_double("adam_eps");
  if (cfg.has("ema_momentum")) tc.ema_momentum = cfg.get_double("ema_momentum");
  if (cfg.has("seed")) tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  if (cfg.has("deterministic")) tc.deterministic = cfg.get_bool("deterministic");
  if (cfg.has("ckpt_every")) tc.ckpt_every = cfg.get_int("ckpt_every");
  if (cfg.has("target")) {
    const std::string& t = cfg.get("target");
    if (t == "pixel")
      tc.target = TrainConfig::Target::pixel;
    else if (t == "ema-feature")
      tc.target = TrainConfig::Target::ema_feature;
    else
      throw std::invalid_argument("config: target must be pixel or ema-feature, got '" + t + "'");
  }
  if (cfg.has("pred_loss")) {
    const std::string& p = cfg.get("pred_loss");
    if (p == "relative")
      tc.pred_loss = TrainConfig::Pred::relative;
    else if (p == "absolute")
      tc.pred_loss = TrainConfig::Pred::absolute;
    else if (p == "none")
      tc.pred_loss = TrainConfig::Pred::none;
    else
      throw std::invalid_argument("config: pred_loss must be relative, absolute or none");
  }
  if (cfg.has("learn_to_mask")) tc.learn_to_mask = cfg.get_bool("learn_to_mask");
  if (cfg.has("gamma")) tc.schedule.gamma = cfg.get_double("gamma");
  if (cfg.has("alpha0")) tc.schedule.alpha0 = cfg.get_double("alpha0");
  if (cfg.has("alphaT")) tc.schedule.alphaT = cfg.get_double("alphaT");
  if (cfg.has("mask_mode")) {
    const std::string& m = cfg.get("mask_mode");
    if (m == "argmax")
      tc.schedule.mode = MaskSchedule::Mode::argmax;
    else if (m == "argmin")
      tc.schedule.mode = MaskSchedule::Mode::argmin;
    else
      throw std::invalid_argument("config: mask_mode must be argmax or argmin");
  }
  if (cfg.has("mask_direction")) {
    const std::string& d = cfg.get("mask_direction");
    if (d == "easy-to-hard")
      tc.schedule.direction = MaskSchedule::Direction::easy_to_hard;
    else if (d == "hard-to-easy")
      tc.schedule.direction = MaskSchedule::Direction::hard_to_easy;
    else
      throw std::invalid_argument("config: mask_direction must be easy-to-hard or hard-to-easy");
  }
  if (cfg.has("patch")) tc.arch.patch = cfg.get_int("patch");
  if (cfg.has("img_h")) tc.arch.img_h = cfg.get_int("img_h");
  if (cfg.has("img_w")) tc.arch.img_w = cfg.get_int("img_w");
  if (cfg.has("channels")) tc.arch.channels = cfg.get_int("channels");
  if (cfg.has("enc_depth")) tc.arch.enc_depth = cfg.get_int("enc_depth");
  if (cfg.has("enc_dim")) tc.arch.enc_dim = cfg.get_int("enc_dim");
  if (cfg.has("enc_heads")) tc.arch.enc_heads = cfg.get_int("enc_heads");
  if (cfg.has("dec_depth")) tc.arch.dec_depth = cfg.get_int("dec_depth");
  if (cfg.has("dec_dim")) tc.arch.dec_dim = cfg.get_int("dec_dim");
  if (cfg.has("dec_heads")) tc.arch.dec_heads = cfg.get_int("dec_heads");
  if (cfg.has("mlp_ratio")) tc.arch.mlp_ratio = cfg.get_int("mlp_ratio");
  if (cfg.has("lrec_scale")) tc.lrec_scale = cfg.get_double("lrec_scale");
  if (cfg.has("lrec_shift")) tc.lrec_shift = cfg.get_double("lrec_shift");
  return tc;
}

double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
             double lr_max) {
  if (total_steps < 1) throw std::invalid_argument("lr_at: total_steps < 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps)
    throw std::invalid_argument("lr_at: warmup_steps outside [0, total_steps)");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at: step outside [0, total_steps]");
  if (warmup_steps > 0 && step <= warmup_steps)
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double prog = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
}

void adamw_update(std::span<float> p, std::span<const float> g, std::vector<float>& m,
                  std::vector<float>& v, std::uint64_t t, double lr, double beta1, double beta2,
                  double eps, double wd) {
  if (p.size() != g.size()) throw std::invalid_argument("adamw: param/grad size mismatch");
  if (m.size() != p.size()) m.assign(p.size(), 0.0f);
  if (v.size() != p.size()) v.assign(p.size(), 0.0f);
  if (t < 1) throw std::invalid_argument("adamw: t starts at 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g[i]);
    v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * static_cast<double>(g[i]) * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double step_val = mhat / (std::sqrt(vhat) + eps) + wd * p[i];
    p[i] = static_cast<float>(p[i] - lr * step_val);
  }
}

void AdamW::step(HpmModel<float>& model, double lr, double wd, double beta1, double beta2,
                 double eps) {
  ++t;
  model.for_each_param([&](const std::string& name, Tensor<float>& p) {
    if (p.grad().empty()) return;  // parameter not reached by backward
    auto& [m, v] = moments[name];
    const double decay = p.shape().size() >= 2 ? wd : 0.0;
    adamw_update(p.data(), p.grad(), m, v, t, lr, beta1, beta2, eps, decay);
  });
}

namespace {

MaskSchedule effective_schedule(const TrainConfig& cfg) {
  MaskSchedule s = cfg.schedule;
  s.total_epochs = cfg.epochs;
  if (!cfg.learn_to_mask) {
    s.alpha0 = 0.0;  // ranking ignored: every masked patch drawn uniformly
    s.alphaT = 0.0;
  }
  return s;
}

ModelConfig arch_for(const TrainConfig& cfg, const PatchBatch& data) {
  ModelConfig a = cfg.arch;
  a.img_h = data.img_h;
  a.img_w = data.img_w;
  a.channels = data.channels;
  a.patch = data.patch;
  a.recon_dim =
      cfg.target == TrainConfig::Target::pixel ? a.patch_dim() : a.enc_dim;
  a.validate();
  return a;
}

void dump_nonfinite(const Trainer& tr, const PatchBatch& batch,
                    const std::vector<PatchMask>& masks, std::int64_t epoch_t, double lrec,
                    double lpred, double lr) {
  std::filesystem::create_directories(tr.cfg.out_dir.empty() ? "." : tr.cfg.out_dir);
  const std::string path =
      (tr.cfg.out_dir.empty() ? std::string(".") : tr.cfg.out_dir) + "/nan_dump.txt";
  std::ofstream f(path);
  f << "non-finite loss\n";
  f << "step = " << tr.global_step << "\n";
  f << "epoch = " << epoch_t << "\n";
  f << "L_rec = " << lrec << "\nL_pred = " << lpred << "\nlr = " << lr << "\n";
  f << "batch_images = " << batch.b << "\n";
  for (std::size_t i = 0; i < masks.size(); ++i)
    f << "mask[" << i << "] seed=" << masks[i].seed << " n_pred=" << masks[i].n_pred
      << " n_rand=" << masks[i].n_rand << "\n";
  f << "--- config ---\n" << to_config(tr.cfg).serialize();
}

}  // namespace

Trainer make_trainer(TrainConfig cfg, const PatchBatch& data) {
  cfg.validate();
  cfg.arch = arch_for(cfg, data);
  cfg.schedule.total_epochs = cfg.epochs;
  Trainer tr;
  tr.cfg = cfg;
  if (cfg.deterministic) kern::set_parallel(false);
  tr.rng_data = Rng::stream(cfg.seed, 0);
  tr.rng_mask = Rng::stream(cfg.seed, 1);
  tr.rng_init = Rng::stream(cfg.seed, 2);
  tr.student = init_model<float>(cfg.arch, tr.rng_init);
  tr.teacher = init_teacher(tr.student);
  tr.ema = EmaState{cfg.ema_momentum, 0};
  tr.steps_per_epoch = data.b / cfg.batch;
  if (tr.steps_per_epoch < 1)
    throw std::invalid_argument("trainer: corpus smaller than one batch");
  tr.total_steps = tr.steps_per_epoch * cfg.epochs;
  tr.warmup_steps = tr.steps_per_epoch * cfg.warmup_epochs;
  return tr;
}

StepMetrics train_step(Trainer& tr, const PatchBatch& batch, std::int64_t epoch_t) {
  const TrainConfig& cfg = tr.cfg;
  const i64 B = batch.b, N = batch.n;
  const MaskSchedule sched = effective_schedule(cfg);

  // 1. Teacher scores the full batch (no graph: teacher has no grads).
  auto tf = teacher_forward(tr.teacher, batch);
  std::span<const float> lhat_t = tf.pred.data();

  // 2. Masks from the schedule, one RNG draw per image.
  std::vector<PatchMask> masks;
  masks.reserve(static_cast<std::size_t>(B));
  for (i64 b = 0; b < B; ++b)
    masks.push_back(generate_mask(lhat_t.subspan(static_cast<std::size_t>(b * N),
                                                 static_cast<std::size_t>(N)),
                                  sched, epoch_t, tr.rng_mask.next_u64()));

  // 3. Reconstruction target.
  ReconTarget<float> target;
  if (cfg.target == TrainConfig::Target::pixel)
    target = pixel_target<float>(batch);
  else
    target = ema_feature_target(tf.features);

  // 4. Student forward and losses.
  auto out = student_forward(tr.student, batch, masks);
  auto rl = recon_loss(out.recon, target, masks);

  std::vector<float> lrec_det(rl.per_patch.data().begin(), rl.per_patch.data().end());
  for (auto& v : lrec_det)
    v = static_cast<float>(cfg.lrec_scale * v + cfg.lrec_shift);

  Tensor<float> lpred;
  i64 degenerate = 0;
  switch (cfg.pred_loss) {
    case TrainConfig::Pred::relative: {
      auto bp = pred_loss_relative(out.pred, std::span<const float>(lrec_det), masks);
      lpred = bp.loss;
      degenerate = bp.degenerate_images;
      break;
    }
    case TrainConfig::Pred::absolute:
      lpred = pred_loss_absolute(out.pred, std::span<const float>(lrec_det), masks);
      break;
    case TrainConfig::Pred::none:
      lpred = Tensor<float>::scalar(0.0f);
      break;
  }
  auto total = combined_loss(rl.total, lpred);

  const double lrec_val = rl.total.item();
  const double lpred_val = lpred.item();
  const double lr = lr_at(tr.global_step, tr.total_steps, tr.warmup_steps, cfg.effective_lr());
  if (!std::isfinite(lrec_val + lpred_val)) {
    dump_nonfinite(tr, batch, masks, epoch_t, lrec_val, lpred_val, lr);
    throw std::runtime_error("training aborted: non-finite loss at step " +
                             std::to_string(tr.global_step) + " (diagnostics in " +
                             (cfg.out_dir.empty() ? std::string(".") : cfg.out_dir) +
                             "/nan_dump.txt)");
  }

  // 5. Backward and update.
  tr.student.for_each_param([](const std::string&, Tensor<float>& p) {
    if (!p.grad().empty()) p.zero_grad();
  });
  total.backward();
  tr.opt.step(tr.student, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
  ema_update(tr.teacher, tr.student, tr.ema);

  // 6. Metrics: per-image rank agreement between the student's predictions
  // and its measured per-patch losses.
  StepMetrics met;
  met.step = tr.global_step;
  met.epoch = epoch_t;
  met.lrec = lrec_val;
  met.lpred = lpred_val;
  met.alpha = alpha_at(sched, epoch_t);
  double rho_sum = 0;
  std::size_t off = 0;
  std::span<const float> lhat_s = out.pred.data();
  for (i64 b = 0; b < B; ++b) {
    const auto& pm = masks[static_cast<std::size_t>(b)];
    std::vector<double> a, c;
    a.reserve(pm.mask_idx.size());
    c.reserve(pm.mask_idx.size());
    for (std::size_t j = 0; j < pm.mask_idx.size(); ++j) {
      a.push_back(lhat_s[static_cast<std::size_t>(b * N + pm.mask_idx[j])]);
      c.push_back(rl.per_patch.data()[off + j]);
    }
    off += pm.mask_idx.size();
    rho_sum += stats::spearman(a, c);
  }
  met.spearman = rho_sum / static_cast<double>(B);
  (void)degenerate;
  ++tr.global_step;
  return met;
}

void save_trainer_checkpoint(const Trainer& tr, const std::string& path) {
  CheckpointData data;
  data.config_text = to_config(tr.cfg).serialize();
  data.epochs_done = tr.epochs_done;
  data.adam_step = tr.opt.t;
  data.ema_updates = tr.ema.updates;
  data.rng_states = {tr.rng_data.state(), tr.rng_mask.state(), tr.rng_init.state()};
  auto& student = const_cast<Trainer&>(tr).student;
  auto& teacher = const_cast<Trainer&>(tr).teacher;
  student.for_each_param([&](const std::string& name, Tensor<float>& p) {
    data.records.push_back(
        {"s." + name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
  });
  teacher.for_each_param([&](const std::string& name, Tensor<float>& p) {
    data.records.push_back(
        {"t." + name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
  });
  student.for_each_param([&](const std::string& name, Tensor<float>& p) {
    const auto it = tr.opt.moments.find(name);
    const std::size_t numel = p.data().size();
    std::vector<float> m(numel, 0.0f), v(numel, 0.0f);
    if (it != tr.opt.moments.end()) {
      if (!it->second.first.empty()) m = it->second.first;
      if (!it->second.second.empty()) v = it->second.second;
    }
    data.records.push_back({"am." + name, p.shape(), std::move(m)});
    data.records.push_back({"av." + name, p.shape(), std::move(v)});
  });
  save_checkpoint(path, data);
}

Trainer resume_trainer(const std::string& ckpt_path, const PatchBatch& data) {
  CheckpointData ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = train_config_from(Config::parse(ck.config_text));
  cfg.validate();
  const ModelConfig arch = arch_for(cfg, data);
  if (arch.img_h != cfg.arch.img_h || arch.img_w != cfg.arch.img_w ||
      arch.patch != cfg.arch.patch || arch.channels != cfg.arch.channels)
    throw std::invalid_argument("resume: corpus geometry differs from the checkpoint");
  Trainer tr = make_trainer(cfg, data);
  tr.epochs_done = ck.epochs_done;
  tr.global_step = ck.epochs_done * tr.steps_per_epoch;
  tr.opt.t = ck.adam_step;
  tr.ema.updates = ck.ema_updates;
  tr.rng_data.set_state(ck.rng_states[0]);
  tr.rng_mask.set_state(ck.rng_states[1]);
  tr.rng_init.set_state(ck.rng_states[2]);

  std::unordered_map<std::string, const ParamRecord*> index;
  for (const auto& rec : ck.records) index[rec.name] = &rec;
  auto restore = [&](const std::string& key, Tensor<float>& p) {
    const auto it = index.find(key);
    if (it == index.end())
      throw std::runtime_error("checkpoint missing record '" + key + "'");
    if (it->second->shape != p.shape())
      throw std::runtime_error("checkpoint record '" + key + "' has wrong shape");
    std::copy(it->second->data.begin(), it->second->data.end(), p.data().begin());
    index.erase(it);
  };
  tr.student.for_each_param(
      [&](const std::string& name, Tensor<float>& p) { restore("s." + name, p); });
  tr.teacher.for_each_param(
      [&](const std::string& name, Tensor<float>& p) { restore("t." + name, p); });
  tr.student.for_each_param([&](const std::string& name, Tensor<float>&) {
    const auto im = index.find("am." + name);
    const auto iv = index.find("av." + name);
    if (im == index.end() || iv == index.end())
      throw std::runtime_error("checkpoint missing moments for '" + name + "'");
    tr.opt.moments[name] = {im->second->data, iv->second->data};
    index.erase(im);
    index.erase(iv);
  });
  if (!index.empty())
    throw std::runtime_error("checkpoint has unexpected record '" + index.begin()->first + "'");
  return tr;
}

LoadedModels load_model_pair(const std::string& ckpt_path) {
  CheckpointData ck = load_checkpoint(ckpt_path);
  LoadedModels lm;
  lm.cfg = train_config_from(Config::parse(ck.config_text));
  lm.cfg.validate();
  lm.cfg.arch.recon_dim = lm.cfg.target == TrainConfig::Target::pixel
                              ? lm.cfg.arch.patch_dim()
                              : lm.cfg.arch.enc_dim;
  lm.cfg.arch.validate();
  lm.epochs_done = ck.epochs_done;
  Rng scratch(0);
  lm.student = init_model<float>(lm.cfg.arch, scratch);
  lm.teacher = init_teacher(lm.student);

  std::unordered_map<std::string, const ParamRecord*> index;
  for (const auto& rec : ck.records) index[rec.name] = &rec;
  auto restore = [&](const std::string& key, Tensor<float>& p) {
    const auto it = index.find(key);
    if (it == index.end())
      throw std::runtime_error("checkpoint missing record '" + key + "'");
    if (it->second->shape != p.shape())
      throw std::runtime_error("checkpoint record '" + key + "' has wrong shape");
    std::copy(it->second->data.begin(), it->second->data.end(), p.data().begin());
  };
  lm.student.for_each_param(
      [&](const std::string& name, Tensor<float>& p) { restore("s." + name, p); });
  lm.teacher.for_each_param(
      [&](const std::string& name, Tensor<float>& p) { restore("t." + name, p); });
  return lm;
}

TrainResult run_training(Trainer& tr, const PatchBatch& data, std::ostream* log_stream) {
  const TrainConfig& cfg = tr.cfg;
  std::filesystem::create_directories(cfg.out_dir.empty() ? "." : cfg.out_dir);
  const std::string base = cfg.out_dir.empty() ? std::string(".") : cfg.out_dir;
  to_config(cfg).save(base + "/config.txt");

  TrainResult result;
  result.metrics_path = base + "/metrics.csv";
  std::ofstream csv(result.metrics_path);
  if (!csv) throw std::runtime_error("cannot open " + result.metrics_path);
  csv << "step,epoch,L_rec,L_pred,alpha_t,spearman\n";

  std::vector<i64> order(static_cast<std::size_t>(data.b));
  PatchBatch batch;
  batch.b = cfg.batch;
  batch.n = data.n;
  batch.d = data.d;
  batch.img_h = data.img_h;
  batch.img_w = data.img_w;
  batch.patch = data.patch;
  batch.channels = data.channels;
  batch.vals.resize(static_cast<std::size_t>(cfg.batch * data.n * data.d));

  char line[256];
  for (i64 epoch = tr.epochs_done; epoch < cfg.epochs; ++epoch) {
    // Rebuilt every epoch: together with the data stream's state this makes
    // the visit order a pure function of (seed, epoch), so a resumed run
    // shuffles exactly what the uninterrupted run would have.
    std::iota(order.begin(), order.end(), 0);
    tr.rng_data.shuffle(std::span<i64>(order));
    double lrec_sum = 0, lpred_sum = 0;
    for (i64 s = 0; s < tr.steps_per_epoch; ++s) {
      const std::size_t row = static_cast<std::size_t>(data.n * data.d);
      for (i64 b = 0; b < cfg.batch; ++b)
        std::copy_n(data.vals.begin() +
                        static_cast<std::ptrdiff_t>(order[static_cast<std::size_t>(
                                                        s * cfg.batch + b)] *
                                                    static_cast<i64>(row)),
                    row, batch.vals.begin() + static_cast<std::ptrdiff_t>(b) *
                                                  static_cast<std::ptrdiff_t>(row));
      StepMetrics met = train_step(tr, batch, epoch);
      std::snprintf(line, sizeof line, "%lld,%lld,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(met.step), static_cast<long long>(met.epoch),
                    met.lrec, met.lpred, met.alpha, met.spearman);
      csv << line;
      lrec_sum += met.lrec;
      lpred_sum += met.lpred;
    }
    tr.epochs_done = epoch + 1;
    result.epoch_mean_lrec.push_back(lrec_sum / static_cast<double>(tr.steps_per_epoch));
    result.epoch_mean_lpred.push_back(lpred_sum / static_cast<double>(tr.steps_per_epoch));
    if (log_stream)
      *log_stream << "epoch " << (epoch + 1) << "/" << cfg.epochs
                  << "  L_rec " << result.epoch_mean_lrec.back() << "  L_pred "
                  << result.epoch_mean_lpred.back() << "\n";
    if (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0 && epoch + 1 < cfg.epochs)
      save_trainer_checkpoint(tr, base + "/ckpt_ep" + std::to_string(epoch + 1) + ".hpmk");
  }
  result.final_checkpoint = base + "/ckpt_final.hpmk";
  save_trainer_checkpoint(tr, result.final_checkpoint);
  return result;
}

}  // namespace hpm
