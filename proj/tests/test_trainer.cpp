#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "hpm/checkpoint.hpp"
#include "hpm/trainer.hpp"

using namespace hpm;
namespace fs = std::filesystem;

namespace {

PatchBatch tiny_data(std::int64_t n_images = 32) {
  SyntheticCorpusSpec s;
  s.n_images = n_images;
  s.h = 8;
  s.w = 8;
  s.p = 2;
  s.block_ph = 2;
  s.block_pw = 2;
  s.n_classes = 4;
  s.seed = 11;
  auto corpus = generate_synthetic_corpus(s);
  return patchify(corpus.images, s.p);
}

TrainConfig tiny_cfg(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.arch.enc_depth = 1;
  cfg.arch.enc_dim = 8;
  cfg.arch.enc_heads = 2;
  cfg.arch.dec_depth = 1;
  cfg.arch.dec_dim = 8;
  cfg.arch.dec_heads = 2;
  cfg.arch.mlp_ratio = 2;
  cfg.epochs = 2;
  cfg.batch = 8;
  cfg.base_lr = 0.05;
  cfg.warmup_epochs = 1;
  cfg.ema_momentum = 0.9;
  cfg.seed = 123;
  cfg.deterministic = true;
  cfg.ckpt_every = 0;
  cfg.out_dir = out_dir;
  return cfg;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("hpm_trainer_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PatchBatch head_batch(const PatchBatch& data, std::int64_t b) {
  PatchBatch out = data;
  out.b = b;
  out.vals.resize(static_cast<std::size_t>(b * data.n * data.d));
  return out;
}

std::vector<float> flat_params(HpmModel<float>& m) {
  std::vector<float> out;
  m.for_each_param([&](const std::string&, Tensor<float>& p) {
    out.insert(out.end(), p.data().begin(), p.data().end());
  });
  return out;
}

std::vector<float> named_params(HpmModel<float>& m, const std::string& prefix) {
  std::vector<float> out;
  m.for_each_param([&](const std::string& name, Tensor<float>& p) {
    if (name.rfind(prefix, 0) == 0) out.insert(out.end(), p.data().begin(), p.data().end());
  });
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool records_equal(const CheckpointData& a, const CheckpointData& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].name != b.records[i].name) return false;
    if (a.records[i].shape != b.records[i].shape) return false;
    if (a.records[i].data != b.records[i].data) return false;
  }
  return a.epochs_done == b.epochs_done && a.adam_step == b.adam_step &&
         a.ema_updates == b.ema_updates && a.rng_states == b.rng_states;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adamw scalar matches hand computation") {
  std::vector<float> p{1.0f}, g{0.5f}, m, v;
  adamw_update(p, g, m, v, 1, 0.1, 0.9, 0.99, 1e-8, 0.0);
  // m=0.05, v=0.0025, mhat=0.5, vhat=0.25 -> step 0.5/(0.5+eps) ~= 1
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  adamw_update(p, g, m, v, 2, 0.1, 0.9, 0.99, 1e-8, 0.0);
  // constant gradient: bias-corrected update stays lr * sign(g)
  CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("adamw zero gradient leaves parameter untouched; decay alone shrinks") {
  std::vector<float> p{1.0f}, g{0.0f}, m, v;
  adamw_update(p, g, m, v, 1, 0.1, 0.9, 0.99, 1e-8, 0.0);
  CHECK(p[0] == 1.0f);
  adamw_update(p, g, m, v, 2, 0.1, 0.9, 0.99, 1e-8, 0.05);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.05 * 1.0).epsilon(1e-7));
  CHECK(p[0] < 1.0f);
}

TEST_CASE("lr schedule: warmup from zero, cosine to zero") {
  CHECK(lr_at(0, 100, 10, 2.0) == 0.0);
  CHECK(lr_at(5, 100, 10, 2.0) == doctest::Approx(1.0));
  CHECK(lr_at(10, 100, 10, 2.0) == doctest::Approx(2.0));
  CHECK(lr_at(55, 100, 10, 2.0) == doctest::Approx(1.0));  // cosine midpoint
  CHECK(lr_at(100, 100, 10, 2.0) <= 1e-8 * 2.0);
  CHECK(lr_at(0, 100, 0, 2.0) == doctest::Approx(2.0));  // no warmup starts at peak
  for (std::int64_t s = 11; s < 100; ++s)
    CHECK(lr_at(s, 100, 10, 2.0) > lr_at(s + 1, 100, 10, 2.0));
  CHECK_THROWS_AS(lr_at(-1, 100, 10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(101, 100, 10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(0, 100, 100, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(0, 0, 0, 1.0), std::invalid_argument);
}

TEST_CASE("config round trip preserves every field") {
  TrainConfig tc;
  tc.target = TrainConfig::Target::ema_feature;
  tc.pred_loss = TrainConfig::Pred::absolute;
  tc.learn_to_mask = false;
  tc.schedule.gamma = 0.6;
  tc.schedule.alpha0 = 0.1;
  tc.schedule.alphaT = 0.9;
  tc.schedule.mode = MaskSchedule::Mode::argmin;
  tc.schedule.direction = MaskSchedule::Direction::hard_to_easy;
  tc.epochs = 7;
  tc.batch = 16;
  tc.base_lr = 3e-3;
  tc.warmup_epochs = 2;
  tc.weight_decay = 0.01;
  tc.beta1 = 0.8;
  tc.beta2 = 0.9;
  tc.adam_eps = 1e-7;
  tc.ema_momentum = 0.5;
  tc.seed = 999;
  tc.deterministic = true;
  tc.ckpt_every = 3;
  tc.corpus_path = "corpus.hpmc";
  tc.out_dir = "runs/x";
  tc.lrec_scale = 2.5;
  tc.lrec_shift = -0.5;
  tc.arch.enc_depth = 2;
  tc.arch.enc_dim = 16;
  tc.arch.enc_heads = 4;
  tc.arch.dec_depth = 1;
  tc.arch.dec_dim = 8;
  tc.arch.dec_heads = 2;
  tc.arch.mlp_ratio = 3;

  const std::string text = to_config(tc).serialize();
  TrainConfig back = train_config_from(Config::parse(text));
  CHECK(to_config(back).serialize() == text);
  CHECK(back.target == TrainConfig::Target::ema_feature);
  CHECK(back.pred_loss == TrainConfig::Pred::absolute);
  CHECK(back.learn_to_mask == false);
  CHECK(back.schedule.mode == MaskSchedule::Mode::argmin);
  CHECK(back.schedule.direction == MaskSchedule::Direction::hard_to_easy);
  CHECK(back.seed == 999);
  CHECK(back.lrec_scale == 2.5);
  CHECK(back.lrec_shift == -0.5);
}

TEST_CASE("config rejects unknown keys and bad enum values") {
  Config c;
  c.set("bogus_key", "1");
  CHECK_THROWS_AS(train_config_from(c), std::invalid_argument);
  Config c2;
  c2.set("target", "pixels");
  CHECK_THROWS_AS(train_config_from(c2), std::invalid_argument);
  Config c3;
  c3.set("pred_loss", "ranked");
  CHECK_THROWS_AS(train_config_from(c3), std::invalid_argument);
  CHECK(train_config_from(Config{}).epochs == TrainConfig{}.epochs);
}

TEST_CASE("trainer validation rejects degenerate setups") {
  auto data = tiny_data();
  auto cfg = tiny_cfg((fresh_dir("validate") / "run").string());
  cfg.batch = 64;  // corpus has 32 images
  CHECK_THROWS_AS(make_trainer(cfg, data), std::invalid_argument);
  cfg = tiny_cfg(cfg.out_dir);
  cfg.warmup_epochs = 2;  // == epochs
  CHECK_THROWS_AS(make_trainer(cfg, data), std::invalid_argument);
  cfg = tiny_cfg(cfg.out_dir);
  cfg.schedule.gamma = 1.0;
  CHECK_THROWS_AS(make_trainer(cfg, data), std::invalid_argument);
}

TEST_CASE("pred_loss none: L_pred is exactly zero and the predictor never moves") {
  auto data = tiny_data();
  auto dir = fresh_dir("prednone");
  auto cfg = tiny_cfg((dir / "run").string());
  cfg.pred_loss = TrainConfig::Pred::none;
  auto tr = make_trainer(cfg, data);
  const auto pred0 = named_params(tr.student, "pred.");
  const auto rec0 = named_params(tr.student, "rec.");
  auto res = run_training(tr, data, nullptr);

  CHECK(named_params(tr.student, "pred.") == pred0);
  CHECK(named_params(tr.student, "rec.") != rec0);
  for (double v : res.epoch_mean_lpred) CHECK(v == 0.0);

  std::ifstream csv(res.metrics_path);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,epoch,L_rec,L_pred,alpha_t,spearman");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    // L_pred is the fourth column
    std::size_t p1 = line.find(',');
    std::size_t p2 = line.find(',', p1 + 1);
    std::size_t p3 = line.find(',', p2 + 1);
    std::size_t p4 = line.find(',', p3 + 1);
    CHECK(line.substr(p3 + 1, p4 - p3 - 1) == "0");
  }
  CHECK(rows == tr.total_steps);
}

TEST_CASE("same seed replays bit-identically") {
  auto data = tiny_data();
  auto dirA = fresh_dir("replayA"), dirB = fresh_dir("replayB");
  auto trA = make_trainer(tiny_cfg((dirA / "run").string()), data);
  auto trB = make_trainer(tiny_cfg((dirB / "run").string()), data);
  run_training(trA, data, nullptr);
  run_training(trB, data, nullptr);
  CHECK(flat_params(trA.student) == flat_params(trB.student));
  CHECK(flat_params(trA.teacher) == flat_params(trB.teacher));
  CHECK(slurp(dirA / "run" / "metrics.csv") == slurp(dirB / "run" / "metrics.csv"));
}

TEST_CASE("resume from checkpoint matches an uninterrupted run bit-for-bit") {
  auto data = tiny_data();
  auto dirA = fresh_dir("resumeA"), dirB = fresh_dir("resumeB");
  auto cfgA = tiny_cfg((dirA / "run").string());
  cfgA.epochs = 3;
  cfgA.ckpt_every = 2;
  auto trA = make_trainer(cfgA, data);
  auto resA = run_training(trA, data, nullptr);

  auto trB = resume_trainer((fs::path(cfgA.out_dir) / "ckpt_ep2.hpmk").string(), data);
  CHECK(trB.epochs_done == 2);
  CHECK(trB.global_step == 2 * trB.steps_per_epoch);
  trB.cfg.out_dir = (dirB / "run").string();
  auto resB = run_training(trB, data, nullptr);

  CHECK(flat_params(trA.student) == flat_params(trB.student));
  CHECK(flat_params(trA.teacher) == flat_params(trB.teacher));
  CHECK(records_equal(load_checkpoint(resA.final_checkpoint),
                      load_checkpoint(resB.final_checkpoint)));
}

TEST_CASE("checkpoint save is deterministic and survives a load/save cycle") {
  auto data = tiny_data();
  auto dir = fresh_dir("ckptbytes");
  auto cfg = tiny_cfg((dir / "run").string());
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  auto tr = make_trainer(cfg, data);
  run_training(tr, data, nullptr);

  const std::string p1 = (dir / "a.hpmk").string(), p2 = (dir / "b.hpmk").string();
  save_trainer_checkpoint(tr, p1);
  save_trainer_checkpoint(tr, p2);
  CHECK(slurp(p1) == slurp(p2));

  auto ck = load_checkpoint(p1);
  const std::string p3 = (dir / "c.hpmk").string();
  save_checkpoint(p3, ck);
  CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("checkpoint loader rejects truncation and corruption") {
  auto data = tiny_data();
  auto dir = fresh_dir("ckptbad");
  auto cfg = tiny_cfg((dir / "run").string());
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  auto tr = make_trainer(cfg, data);
  const std::string good = (dir / "good.hpmk").string();
  save_trainer_checkpoint(tr, good);
  std::string bytes = slurp(good);

  const std::string trunc = (dir / "trunc.hpmk").string();
  std::ofstream(trunc, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_WITH_AS(load_checkpoint(trunc),
                       doctest::Contains("checksum"), std::runtime_error);

  std::string flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x40;
  const std::string corrupt = (dir / "corrupt.hpmk").string();
  std::ofstream(corrupt, std::ios::binary) << flipped;
  CHECK_THROWS_WITH_AS(load_checkpoint(corrupt),
                       doctest::Contains("checksum"), std::runtime_error);

  std::string badmagic = bytes;
  badmagic[0] = 'X';
  const std::string wrong = (dir / "wrong.hpmk").string();
  std::ofstream(wrong, std::ios::binary) << badmagic;
  CHECK_THROWS_AS(load_checkpoint(wrong), std::runtime_error);
}

TEST_CASE("learn_to_mask off equals a zero-alpha schedule exactly") {
  auto data = tiny_data();
  auto dirA = fresh_dir("l2mA"), dirB = fresh_dir("l2mB");
  auto cfgA = tiny_cfg((dirA / "run").string());
  cfgA.learn_to_mask = true;
  cfgA.schedule.alpha0 = 0.0;
  cfgA.schedule.alphaT = 0.0;
  auto cfgB = tiny_cfg((dirB / "run").string());
  cfgB.learn_to_mask = false;
  cfgB.schedule.alpha0 = 0.0;
  cfgB.schedule.alphaT = 0.5;  // ignored: masking must fall back to uniform
  auto trA = make_trainer(cfgA, data);
  auto trB = make_trainer(cfgB, data);
  run_training(trA, data, nullptr);
  run_training(trB, data, nullptr);
  CHECK(flat_params(trA.student) == flat_params(trB.student));
}

TEST_CASE("scaling or shifting the measured losses does not change relative training") {
  auto data = tiny_data();
  auto dirA = fresh_dir("affA"), dirB = fresh_dir("affB");
  auto cfgA = tiny_cfg((dirA / "run").string());
  auto cfgB = tiny_cfg((dirB / "run").string());
  cfgB.lrec_scale = 100.0;
  cfgB.lrec_shift = -5.0;
  auto trA = make_trainer(cfgA, data);
  auto trB = make_trainer(cfgB, data);
  run_training(trA, data, nullptr);
  run_training(trB, data, nullptr);
  CHECK(flat_params(trA.student) == flat_params(trB.student));
  CHECK(slurp(dirA / "run" / "metrics.csv") == slurp(dirB / "run" / "metrics.csv"));
}

TEST_CASE("reconstruction loss falls over a short run") {
  auto data = tiny_data(64);
  auto dir = fresh_dir("smoke");
  auto cfg = tiny_cfg((dir / "run").string());
  cfg.epochs = 6;
  cfg.batch = 16;
  cfg.base_lr = 0.2;  // effective 0.2*16/256 = 0.0125
  auto tr = make_trainer(cfg, data);
  auto res = run_training(tr, data, nullptr);
  CHECK(res.epoch_mean_lrec.size() == 6);
  CHECK(res.epoch_mean_lrec.back() < res.epoch_mean_lrec.front());
  for (double v : res.epoch_mean_lrec) CHECK(std::isfinite(v));
  CHECK(fs::exists(dir / "run" / "config.txt"));
  CHECK(fs::exists(res.final_checkpoint));
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
  auto data = tiny_data();
  auto dir = fresh_dir("nan");
  auto cfg = tiny_cfg((dir / "run").string());
  auto tr = make_trainer(cfg, data);
  tr.student.patch_w.data()[0] = std::nanf("");
  auto batch = head_batch(data, cfg.batch);
  CHECK_THROWS_AS(train_step(tr, batch, 0), std::runtime_error);
  CHECK(fs::exists(fs::path(cfg.out_dir) / "nan_dump.txt"));
  const std::string dump = slurp(fs::path(cfg.out_dir) / "nan_dump.txt");
  CHECK(dump.find("non-finite") != std::string::npos);
  CHECK(dump.find("--- config ---") != std::string::npos);
}

TEST_CASE("ema and adam counters advance with training") {
  auto data = tiny_data();
  auto dir = fresh_dir("counters");
  auto cfg = tiny_cfg((dir / "run").string());
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  auto tr = make_trainer(cfg, data);
  run_training(tr, data, nullptr);
  CHECK(tr.opt.t == static_cast<std::uint64_t>(tr.steps_per_epoch));
  CHECK(tr.ema.updates == static_cast<std::uint64_t>(tr.steps_per_epoch));
  CHECK(tr.global_step == tr.steps_per_epoch);
  CHECK(tr.epochs_done == 1);
}

}  // TEST_SUITE
