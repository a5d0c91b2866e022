#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "tiacam/error.hpp"
#include "tiacam/trainer.hpp"

using namespace tiacam;

namespace {

constexpr int kH = 8, kW = 8, kC = 1;
constexpr int kBackboneDim = 12;
constexpr int kFeatureDim = 10;

ExtractorConfig ext_cfg(double dropout = 0.0) {
  ExtractorConfig c;
  c.in_dim = kBackboneDim;
  c.hidden = 16;
  c.proj_hidden = 8;
  c.out_dim = kFeatureDim;
  c.blocks = 1;
  c.dropout = dropout;
  c.normalize_output = true;
  return c;
}

DiscriminatorConfig disc_cfg() {
  DiscriminatorConfig c;
  c.feature_dim = kFeatureDim;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff_hidden = 16;
  return c;
}

AnchorSet make_anchors(int k, uint64_t seed) {
  Rng rng(seed);
  AnchorSet a;
  a.E = Tensor({k, kFeatureDim});
  for (double& v : a.E.vec()) v = rng.normal();
  for (int i = 0; i < k; ++i) a.names.push_back("class" + std::to_string(i));
  return a;
}

TrainSet make_set(int n, uint64_t seed, int classes = 3) {
  Rng rng(seed);
  TrainSet s;
  for (int i = 0; i < n; ++i) {
    Tensor x({kH, kW, kC});
    for (double& v : x.vec()) v = rng.uniform(0.1, 0.9);
    s.images.push_back(x);
    s.labels.push_back(i % classes);
  }
  return s;
}

struct World {
  ProjectionBackbone backbone{kH, kW, kC, 24, kBackboneDim, 99};
  TrainConfig cfg;
  Trainer trainer;
  TrainState state;

  explicit World(uint64_t seed, double lr = 1e-4, double dropout = 0.0)
      : cfg(make_cfg(seed, lr)),
        trainer(cfg, backbone, make_anchors(3, seed + 50),
                SemanticProbe(kH, kW, kC, 8, seed + 60)),
        state(make_train_state(cfg, ext_cfg(dropout), disc_cfg(), kH, kW, kC)) {
  }

  static TrainConfig make_cfg(uint64_t seed, double lr) {
    TrainConfig c;
    c.lr = lr;
    c.batch = 3;
    c.seed = seed;
    return c;
  }
};

// Byte snapshots for bitwise isolation checks.
std::vector<std::vector<double>> snap(
    const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::vector<std::vector<double>> out;
  for (auto& [name, t] : params) out.push_back(t->vec());
  return out;
}

bool same(const std::vector<std::vector<double>>& a,
          const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Pushes the distortion parameters off the exact-identity point, where the
// invariance gradient degenerates to numerical noise.
void nudge_aug(AugmentorParams& p) {
  p.noise_sigma.vec()[0] = 0.06;
  p.moire_amp.vec()[0] = 0.05;
  p.moire_fx.vec()[0] = 6.0;
  p.moire_fy.vec()[0] = 9.0;
  for (double& v : p.photo_alpha.vec()) v = 1.15;
  for (double& v : p.photo_beta.vec()) v = 0.05;
}

}  // namespace

TEST_CASE("config and construction validation") {
  TrainConfig c;
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda_adv = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.n_aug = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ProjectionBackbone pb(kH, kW, kC, 24, kBackboneDim, 1);
  SUBCASE("precomputed backbone cannot train") {
    PrecomputedBackbone store(kBackboneDim, {{"a", std::vector<double>(12, 0.0)}});
    CHECK_THROWS_WITH_AS(
        Trainer(TrainConfig{}, store, make_anchors(3, 1),
                SemanticProbe(kH, kW, kC, 8, 2)),
        doctest::Contains("precomputed"), ConfigError);
  }
  SUBCASE("one anchor class cannot supply negatives") {
    CHECK_THROWS_AS(Trainer(TrainConfig{}, pb, make_anchors(1, 1),
                            SemanticProbe(kH, kW, kC, 8, 2)),
                    ConfigError);
  }
}

TEST_CASE("each phase updates exactly its own parameter set") {
  World w(21);
  nudge_aug(w.state.aug);
  Batch batch = w.trainer.sample_batch(make_set(6, 22), w.state.rng);

  auto theta0 = snap(w.state.extractor.parameters());
  auto buf0 = snap(w.state.extractor.buffers());
  auto psi0 = snap(w.state.disc.parameters());
  auto big0 = snap(w.state.aug.all_tensors());

  SUBCASE("discriminator phase") {
    StepLosses l = w.trainer.step_discriminator(w.state, batch);
    CHECK(std::isfinite(l.disc));
    CHECK(same(snap(w.state.extractor.parameters()), theta0));
    CHECK(same(snap(w.state.extractor.buffers()), buf0));
    CHECK(same(snap(w.state.aug.all_tensors()), big0));
    CHECK_FALSE(same(snap(w.state.disc.parameters()), psi0));
    CHECK(w.state.step == 1);
  }
  SUBCASE("distortion phase") {
    StepLosses l = w.trainer.step_augmentor(w.state, batch);
    CHECK(std::isfinite(l.inv));
    CHECK(std::isfinite(l.sem));
    CHECK(same(snap(w.state.extractor.parameters()), theta0));
    CHECK(same(snap(w.state.extractor.buffers()), buf0));
    CHECK(same(snap(w.state.disc.parameters()), psi0));
    CHECK_FALSE(same(snap(w.state.aug.all_tensors()), big0));
  }
  SUBCASE("extractor phase") {
    StepLosses l = w.trainer.step_extractor(w.state, batch);
    CHECK(std::isfinite(l.adv));
    CHECK(std::isfinite(l.inv));
    CHECK(same(snap(w.state.disc.parameters()), psi0));
    CHECK(same(snap(w.state.aug.all_tensors()), big0));
    CHECK_FALSE(same(snap(w.state.extractor.parameters()), theta0));
  }
}

TEST_CASE("distortion phase stops gradients at the extractor exactly") {
  World w(31);
  nudge_aug(w.state.aug);
  Batch batch = w.trainer.sample_batch(make_set(6, 32), w.state.rng);

  AugStepDebug dbg;
  w.trainer.step_augmentor(w.state, batch, &dbg);
  CHECK(dbg.max_abs_extractor_grad == 0.0);
  CHECK(dbg.max_abs_aug_grad > 0.0);

  // The loss still responds to the extractor's weights; only the gradient is
  // severed.
  Rng replay(777);
  double before = w.trainer.measure_invariance(w.state, batch, replay);
  auto params = w.state.extractor.parameters();
  params[0].second->vec()[0] += 0.05;
  double after = w.trainer.measure_invariance(w.state, batch, replay);
  CHECK(before != after);
}

TEST_CASE("clamp intervals hold after every distortion step") {
  World w(41, 0.5);  // huge lr to slam parameters into the walls
  nudge_aug(w.state.aug);
  TrainSet set = make_set(6, 42);
  ClampConfig c;
  for (int i = 0; i < 3; ++i) {
    w.trainer.step_augmentor(w.state, w.trainer.sample_batch(set, w.state.rng));
    CHECK(w.state.aug.noise_sigma.vec()[0] >= 0.0);
    CHECK(w.state.aug.noise_sigma.vec()[0] <= c.sigma_hi);
    CHECK(w.state.aug.moire_amp.vec()[0] <= c.moire_amp_hi);
    CHECK(w.state.aug.A.vec()[8] == 1.0);
    for (double v : w.state.aug.photo_alpha.vec()) {
      CHECK(v >= c.alpha_lo);
      CHECK(v <= c.alpha_hi);
    }
    for (double v : w.state.aug.mask.vec()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("ascent and descent directions at small learning rate") {
  // The distortion phase ascends the invariance loss; the extractor phase
  // descends it. First-order checks on the exact replayed batch and noise.
  // Loss weights isolate the invariance term so the direction is unambiguous.
  int aug_ok = 0, ext_ok = 0;
  const int trials = 5;
  for (int t = 0; t < trials; ++t) {
    World w(100 + t, 1e-4);
    nudge_aug(w.state.aug);
    Batch batch = w.trainer.sample_batch(make_set(6, 170 + t), w.state.rng);

    {
      TrainConfig c = w.trainer.config();
      c.lambda_sem = 0.0;
      Trainer tr(c, w.backbone, make_anchors(3, 150 + t),
                 SemanticProbe(kH, kW, kC, 8, 160 + t));
      Rng replay = w.state.rng;
      double before = tr.measure_invariance(w.state, batch, replay);
      tr.step_augmentor(w.state, batch);
      double after = tr.measure_invariance(w.state, batch, replay);
      if (after >= before - 1e-10) ++aug_ok;
    }
    {
      TrainConfig c = w.trainer.config();
      c.lambda_adv = 0.0;
      Trainer tr(c, w.backbone, make_anchors(3, 150 + t),
                 SemanticProbe(kH, kW, kC, 8, 160 + t));
      Rng replay = w.state.rng;
      double before = tr.measure_invariance(w.state, batch, replay, true);
      tr.step_extractor(w.state, batch);
      double after = tr.measure_invariance(w.state, batch, replay, true);
      if (after <= before + 1e-10) ++ext_ok;
    }
  }
  CHECK(aug_ok >= trials - 1);
  CHECK(ext_ok >= trials - 1);
}

TEST_CASE("zero learning rate freezes parameters but counts steps") {
  World w(51);
  nudge_aug(w.state.aug);
  Batch batch = w.trainer.sample_batch(make_set(6, 52), w.state.rng);
  w.state.opt_disc.set_lr(0.0);
  auto psi0 = snap(w.state.disc.parameters());
  w.trainer.step_discriminator(w.state, batch);
  CHECK(same(snap(w.state.disc.parameters()), psi0));
  CHECK(w.state.step == 1);
  CHECK(w.state.opt_disc.steps() == 1);
}

TEST_CASE("training loop logs metrics and replays exactly") {
  TrainSet set = make_set(8, 61);
  auto run = [&](int rounds) {
    ProjectionBackbone pb(kH, kW, kC, 24, kBackboneDim, 99);
    TrainConfig c = World::make_cfg(7, 1e-3);
    c.rounds = rounds;
    Trainer tr(c, pb, make_anchors(3, 62), SemanticProbe(kH, kW, kC, 8, 63));
    TrainState st = make_train_state(c, ext_cfg(0.1), disc_cfg(), kH, kW, kC);
    nudge_aug(st.aug);
    return tr.train(st, set);
  };

  auto log = run(3);
  REQUIRE(log.size() == 3);
  for (size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].round == int64_t(i));
    CHECK(std::isfinite(log[i].loss_disc));
    CHECK(std::isfinite(log[i].loss_adv));
    CHECK(std::isfinite(log[i].loss_inv));
    CHECK(std::isfinite(log[i].loss_sem));
    CHECK(log[i].mean_cos == 1.0 - log[i].loss_inv);
  }
  auto log2 = run(3);
  for (size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].loss_disc == log2[i].loss_disc);
    CHECK(log[i].loss_adv == log2[i].loss_adv);
    CHECK(log[i].loss_inv == log2[i].loss_inv);
    CHECK(log[i].loss_sem == log2[i].loss_sem);
  }
  CHECK(run(0).empty());
}

TEST_CASE("checkpoint callback fires on schedule") {
  ProjectionBackbone pb(kH, kW, kC, 24, kBackboneDim, 99);
  TrainConfig c = World::make_cfg(8, 1e-3);
  c.rounds = 5;
  c.checkpoint_every = 2;
  Trainer tr(c, pb, make_anchors(3, 71), SemanticProbe(kH, kW, kC, 8, 72));
  TrainState st = make_train_state(c, ext_cfg(), disc_cfg(), kH, kW, kC);
  std::vector<int64_t> fired;
  tr.train(st, make_set(6, 73),
           [&](TrainState&, int64_t round) { fired.push_back(round); });
  CHECK(fired == std::vector<int64_t>{2, 4});
}

TEST_CASE("metrics log file format") {
  std::vector<RoundMetrics> rows(2);
  rows[0] = {0, 2.7, -1.3, 0.5, 0.1, 0.5};
  rows[1] = {1, 2.5, -1.2, 0.4, 0.2, 0.6};
  TrainConfig cfg;
  cfg.lambda_adv = 0.5;
  std::string path = "trainer_metrics_test.csv";
  write_metrics_csv(path, rows, cfg);
  std::ifstream is(path);
  std::string comment, header, r0, r1;
  REQUIRE(std::getline(is, comment));
  REQUIRE(std::getline(is, header));
  REQUIRE(std::getline(is, r0));
  REQUIRE(std::getline(is, r1));
  CHECK(comment.substr(0, 2) == "# ");
  CHECK(comment.find("lambda_adv=0.5") != std::string::npos);
  CHECK(header == "round,loss_disc,loss_adv,loss_inv,loss_sem,mean_cos");
  CHECK(r0.substr(0, 2) == "0,");
  CHECK(r1.substr(0, 2) == "1,");
  std::remove(path.c_str());
}

TEST_CASE("pretraining fits distortion modules to targets") {
  PretrainConfig pc;
  pc.img_h = 12;
  pc.img_w = 12;
  pc.img_c = 1;

  SUBCASE("fixed photometric target is recovered within five percent") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    Tensor ta = Tensor::full({1}, 1.5);
    Tensor tg = Tensor::full({1}, 1.0);
    Tensor tb = Tensor::full({1}, 0.05);
    TargetFn target = [&](const Tensor& x, Rng&) {
      return apply_photometric(x, ta, tg, tb);
    };
    pc.lr = 0.02;
    pc.epochs = 12;
    PretrainReport rep = pretrain_augmentor(p, "photometric", target, 40, pc);
    CHECK(rep.steps == 12 * 40);
    CHECK(std::abs(p.photo_alpha.vec()[0] - 1.5) < 0.075);
    CHECK(std::abs(p.photo_beta.vec()[0] - 0.05) < 0.05 * 1.5);
    CHECK(std::abs(p.photo_gamma.vec()[0] - 1.0) < 0.05);
    CHECK(rep.final_mse < 1e-3);
  }

  SUBCASE("identity target pulls a noisy module back to identity") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    p.noise_sigma.vec()[0] = 0.1;
    pc.lr = 0.01;
    pc.epochs = 10;
    PretrainReport rep =
        pretrain_augmentor(p, "additive", "additive", 0.0, 30, pc);
    CHECK(p.noise_sigma.vec()[0] < 0.02);
    CHECK(rep.final_mse < 1e-4);
  }

  SUBCASE("noise amplitude is identifiable through shared draws") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    pc.lr = 0.01;
    pc.epochs = 10;
    pretrain_augmentor(p, "additive", "additive", 0.5, 30, pc);
    // Manual additive at severity 0.5 uses sigma = 0.5 * 0.12.
    CHECK(p.noise_sigma.vec()[0] ==
          doctest::Approx(0.5 * kManualSigmaMax).epsilon(0.08));
  }

  SUBCASE("zero epochs change nothing") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    nudge_aug(p);
    auto before = snap(p.all_tensors());
    pc.epochs = 0;
    PretrainReport rep = pretrain_augmentor(p, "photometric", "photometric",
                                            0.5, 10, pc);
    CHECK(rep.steps == 0);
    CHECK(same(snap(p.all_tensors()), before));
  }

  SUBCASE("unknown module names the valid ones") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    CHECK_THROWS_WITH_AS(
        pretrain_augmentor(p, "vignette", "photometric", 0.5, 1, pc),
        doctest::Contains("valid: additive, compression"), ConfigError);
  }

  SUBCASE("non-finite targets raise a divergence error") {
    AugmentorParams p = AugmentorParams::identity(12, 12, 1);
    TargetFn bad = [](const Tensor& x, Rng&) {
      Tensor y = x.clone();
      y.vec()[0] = std::numeric_limits<double>::quiet_NaN();
      return y;
    };
    CHECK_THROWS_WITH_AS(pretrain_augmentor(p, "photometric", bad, 2, pc),
                         doctest::Contains("step 0"), ConvergenceError);
  }
}
