#include "tiacam/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "tiacam/error.hpp"

namespace tiacam {

namespace {

void check_finite_grads(const std::vector<Tensor>& grads, const char* phase,
                        int64_t step) {
  for (const Tensor& g : grads) {
    for (double v : g.vec()) {
      if (!std::isfinite(v)) {
        throw ConvergenceError("non-finite gradient in " + std::string(phase) +
                               " phase at step " + std::to_string(step));
      }
    }
  }
}

// Tape leaves over a parameter list, the bound view, and grad readback.
struct TrackedParams {
  std::vector<std::pair<std::string, Tensor*>> params;
  std::vector<Tensor> leaves;

  TrackedParams(Tape& tape, std::vector<std::pair<std::string, Tensor*>> p)
      : params(std::move(p)) {
    leaves.reserve(params.size());
    for (auto& [name, t] : params) leaves.push_back(tape.leaf(*t, true));
  }
  std::vector<Tensor> grads(const Tape& tape) const {
    std::vector<Tensor> g;
    g.reserve(leaves.size());
    for (const Tensor& l : leaves) g.push_back(tape.grad(l));
    return g;
  }
};

Tensor mean_of(const std::vector<Tensor>& scalars) {
  Tensor s = scalars[0];
  for (size_t i = 1; i < scalars.size(); ++i) s = add(s, scalars[i]);
  return mul_scalar(s, 1.0 / double(scalars.size()));
}

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (lambda_adv < 0 || lambda_sem < 0 || lambda_c < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (n_disc < 1 || n_aug < 1 || n_feat < 1) {
    throw ConfigError("every phase needs at least one step per round");
  }
  if (rounds < 0) throw ConfigError("round count must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint period must be >= 0");
  if (manual_severity < 0 || manual_severity > 1) {
    throw ConfigError("manual severity must lie in [0,1]");
  }
}

TrainState make_train_state(const TrainConfig& cfg, const ExtractorConfig& ext,
                            const DiscriminatorConfig& disc, int img_h,
                            int img_w, int img_c, int kernel_size) {
  cfg.validate();
  Rng ext_init(cfg.seed + 1);
  Rng disc_init(cfg.seed + 2);
  TrainState st{AugmentorParams::identity(img_h, img_w, img_c, kernel_size),
                InvariantExtractor(ext, ext_init),
                PairDiscriminator(disc, disc_init),
                Adam(cfg.lr),
                Adam(cfg.lr),
                Adam(cfg.lr),
                Rng(cfg.seed + 3)};
  // identity() disables the compression stage; training wants the frequency
  // mask live, so quantization starts as a mild all-pass distortion.
  st.aug.comp_enabled = true;
  return st;
}

Trainer::Trainer(TrainConfig cfg, BackboneProvider& backbone,
                 AnchorSet anchors, SemanticProbe probe)
    : cfg_(std::move(cfg)),
      backbone_(backbone),
      anchors_(std::move(anchors)),
      probe_(std::move(probe)) {
  cfg_.validate();
  if (!backbone_.differentiable()) {
    throw ConfigError(
        "training needs a backbone that encodes pixels with gradients; a "
        "precomputed embedding store cannot encode distorted images");
  }
  if (anchors_.count() < 2) {
    throw ConfigError("training needs at least two anchor classes to draw "
                      "negative pairs");
  }
}

Tensor Trainer::distort(const Tensor& x, const AugmentorParams& p,
                        Rng& rng) const {
  if (cfg_.augmentor_learned) return compose_augment(x, p, rng);
  return manual_augment(x, "all", rng.uniform(0.0, cfg_.manual_severity), rng);
}

Trainer::Encoded Trainer::encode_batch(const TrainState& state,
                                       const Batch& batch, Rng& rng) {
  if (batch.images.empty()) throw DataError("empty batch");
  if (batch.images.size() != batch.labels.size()) {
    throw DataError("batch images and labels differ in length");
  }
  std::vector<Tensor> zc, za;
  zc.reserve(batch.images.size());
  za.reserve(batch.images.size());
  for (const Tensor& x : batch.images) {
    Tensor xa = distort(x, state.aug, rng);
    zc.push_back(backbone_.encode(x));
    za.push_back(backbone_.encode(xa));
  }
  return Encoded{concat_rows(zc), concat_rows(za)};
}

StepLosses Trainer::step_discriminator(TrainState& state, const Batch& batch) {
  Encoded e = encode_batch(state, batch, state.rng);
  Tensor f_clean = state.extractor.infer(e.z_clean);
  Tensor f_aug = state.extractor.infer(e.z_aug);
  auto [e_pos, e_neg] = sample_pair_batch(anchors_, batch.labels, state.rng);

  Tape tape;
  TrackedParams tracked(tape, state.disc.parameters());
  auto bound = state.disc.bind_leaves(tracked.leaves);
  Tensor p_pos_clean = match_prob(bound.forward(f_clean, e_pos));
  Tensor p_pos_aug = match_prob(bound.forward(f_aug, e_pos));
  Tensor p_neg_clean = match_prob(bound.forward(f_clean, e_neg));
  Tensor p_neg_aug = match_prob(bound.forward(f_aug, e_neg));
  Tensor loss = loss_disc(p_pos_clean, p_pos_aug, p_neg_clean, p_neg_aug);

  tape.backward(loss);
  std::vector<Tensor> grads = tracked.grads(tape);
  check_finite_grads(grads, "discriminator", state.step);
  state.opt_disc.step(tracked.params, grads);
  ++state.step;

  StepLosses out;
  out.disc = loss.item();
  return out;
}

StepLosses Trainer::step_extractor(TrainState& state, const Batch& batch) {
  Encoded e = encode_batch(state, batch, state.rng);
  auto [e_pos, e_neg] = sample_pair_batch(anchors_, batch.labels, state.rng);
  (void)e_neg;  // the confusion objective only scores positive pairings

  Tape tape;
  TrackedParams tracked(tape, state.extractor.parameters());
  auto bound = state.extractor.bind_leaves(tracked.leaves);
  Tensor f_clean = bound.forward(e.z_clean, true, state.rng);
  Tensor f_aug = bound.forward(e.z_aug, true, state.rng);

  // Discriminator weights stay plain tensors here, so no psi gradient exists.
  Tensor p_clean = match_prob(state.disc.infer_logits(f_clean, e_pos));
  Tensor p_aug = match_prob(state.disc.infer_logits(f_aug, e_pos));
  Tensor adv = loss_adv(p_clean, p_aug);
  Tensor inv = loss_inv(f_clean, f_aug);
  Tensor loss = mul_scalar(adv, cfg_.lambda_adv);
  if (cfg_.extractor_uses_inv) loss = add(loss, inv);

  tape.backward(loss);
  std::vector<Tensor> grads = tracked.grads(tape);
  check_finite_grads(grads, "extractor", state.step);
  state.opt_feat.step(tracked.params, grads);
  ++state.step;

  StepLosses out;
  out.adv = adv.item();
  out.inv = inv.item();
  return out;
}

StepLosses Trainer::step_augmentor(TrainState& state, const Batch& batch,
                                   AugStepDebug* debug) {
  if (!cfg_.augmentor_learned) {
    throw ConfigError(
        "the distortion parameters are frozen under a manual-augmentation "
        "config; there is no distortion phase to step");
  }
  if (batch.images.empty()) throw DataError("empty batch");

  Tape tape;
  AugmentorParams aug_leaves = state.aug.as_leaves(tape, true);

  // The extractor's parameters enter the tape behind barriers: the loss value
  // still responds to them, but their gradients are exactly zero while the
  // path from the distortion parameters through the activations stays live.
  TrackedParams ext_tracked(tape, state.extractor.parameters());
  std::vector<Tensor> blocked;
  blocked.reserve(ext_tracked.leaves.size());
  for (const Tensor& l : ext_tracked.leaves) blocked.push_back(tape.barrier(l));
  auto ext_bound = state.extractor.bind_leaves(blocked);

  std::vector<Tensor> zc, za, sem_terms;
  for (const Tensor& x : batch.images) {
    Tensor xa = compose_augment(x, aug_leaves, state.rng);
    zc.push_back(backbone_.encode(x));
    za.push_back(backbone_.encode(xa));
    sem_terms.push_back(probe_.loss(x, xa));
  }
  Rng unused(0);  // eval-mode forward draws nothing
  Tensor f_clean = ext_bound.forward(concat_rows(zc), false, unused);
  Tensor f_aug = ext_bound.forward(concat_rows(za), false, unused);

  Tensor inv = loss_inv(f_clean, f_aug);
  Tensor sem = mean_of(sem_terms);
  // Ascend inv - lambda_sem * sem by minimizing its negation.
  Tensor objective = sub(mul_scalar(sem, cfg_.lambda_sem), inv);

  tape.backward(objective);
  auto trainable = aug_leaves.trainable();
  std::vector<Tensor> grads;
  grads.reserve(trainable.size());
  for (auto& [name, t] : trainable) grads.push_back(tape.grad(*t));
  check_finite_grads(grads, "augmentor", state.step);

  if (debug) {
    debug->max_abs_extractor_grad = 0.0;
    for (const Tensor& g : ext_tracked.grads(tape)) {
      for (double v : g.vec()) {
        debug->max_abs_extractor_grad =
            std::max(debug->max_abs_extractor_grad, std::abs(v));
      }
    }
    debug->max_abs_aug_grad = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.vec()) {
        debug->max_abs_aug_grad = std::max(debug->max_abs_aug_grad, std::abs(v));
      }
    }
  }

  state.opt_aug.step(state.aug.trainable(), grads);
  clamp_params(state.aug, cfg_.clamp);
  ++state.step;

  StepLosses out;
  out.inv = inv.item();
  out.sem = sem.item();
  return out;
}

double Trainer::measure_invariance(TrainState& state, const Batch& batch,
                                   Rng rng, bool train_mode) {
  if (batch.images.empty()) throw DataError("empty batch");
  std::vector<Tensor> zc, za;
  for (const Tensor& x : batch.images) {
    Tensor xa = distort(x, state.aug, rng);
    zc.push_back(backbone_.encode(x));
    za.push_back(backbone_.encode(xa));
  }
  Tensor z_clean = concat_rows(zc);
  Tensor z_aug = concat_rows(za);
  if (!train_mode) {
    return loss_inv(state.extractor.infer(z_clean),
                    state.extractor.infer(z_aug))
        .item();
  }
  // Batch-statistics forward with fixed dropout draws; running statistics are
  // restored so measurement never perturbs the state.
  std::vector<std::vector<double>> saved;
  auto buffers = state.extractor.buffers();
  saved.reserve(buffers.size());
  for (auto& [name, t] : buffers) saved.push_back(t->vec());
  std::vector<Tensor> plain;
  for (auto& [name, t] : state.extractor.parameters()) plain.push_back(*t);
  auto bound = state.extractor.bind_leaves(plain);
  Rng drop(1);
  double v = loss_inv(bound.forward(z_clean, true, drop),
                      bound.forward(z_aug, true, drop))
                 .item();
  for (size_t i = 0; i < buffers.size(); ++i) buffers[i].second->vec() = saved[i];
  return v;
}

Batch Trainer::sample_batch(const TrainSet& set, Rng& rng) const {
  if (set.images.empty()) throw DataError("training set is empty");
  if (set.images.size() != set.labels.size()) {
    throw DataError("training set images and labels differ in length");
  }
  Batch b;
  for (int i = 0; i < cfg_.batch; ++i) {
    int j = rng.uniform_int(int(set.images.size()));
    b.images.push_back(set.images[j]);
    b.labels.push_back(set.labels[j]);
  }
  return b;
}

std::vector<RoundMetrics> Trainer::train(
    TrainState& state, const TrainSet& set,
    const std::function<void(TrainState&, int64_t)>& on_checkpoint) {
  std::vector<RoundMetrics> log;
  log.reserve(cfg_.rounds);
  for (int r = 0; r < cfg_.rounds; ++r) {
    StepLosses ld, la, lf;
    for (int i = 0; i < cfg_.n_disc; ++i) {
      ld = step_discriminator(state, sample_batch(set, state.rng));
    }
    if (cfg_.augmentor_learned) {
      for (int i = 0; i < cfg_.n_aug; ++i) {
        la = step_augmentor(state, sample_batch(set, state.rng));
      }
    }
    for (int i = 0; i < cfg_.n_feat; ++i) {
      lf = step_extractor(state, sample_batch(set, state.rng));
    }
    RoundMetrics m;
    m.round = state.round;
    m.loss_disc = ld.disc;
    m.loss_adv = lf.adv;
    m.loss_inv = lf.inv;
    m.loss_sem = la.sem;
    m.mean_cos = 1.0 - lf.inv;
    log.push_back(m);
    ++state.round;
    if (cfg_.checkpoint_every > 0 && on_checkpoint &&
        (r + 1) % cfg_.checkpoint_every == 0) {
      on_checkpoint(state, state.round);
    }
  }
  return log;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<RoundMetrics>& rows,
                       const TrainConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics log to " + path);
  os << std::setprecision(17);
  os << "# lr=" << cfg.lr << " lambda_adv=" << cfg.lambda_adv
     << " lambda_sem=" << cfg.lambda_sem << " seed=" << cfg.seed << "\n";
  os << "round,loss_disc,loss_adv,loss_inv,loss_sem,mean_cos\n";
  for (const RoundMetrics& m : rows) {
    os << m.round << "," << m.loss_disc << "," << m.loss_adv << ","
       << m.loss_inv << "," << m.loss_sem << "," << m.mean_cos << "\n";
  }
  if (!os.flush()) throw DataError("failed writing metrics log to " + path);
}

namespace {

// Which parameter tensors a pretraining module fits, and its forward map.
struct ModuleSpec {
  std::vector<std::string> names;
  std::function<Tensor(const Tensor&, const AugmentorParams&, Rng&)> forward;
};

const std::map<std::string, ModuleSpec>& module_specs() {
  static const std::map<std::string, ModuleSpec> specs = {
      {"moire",
       {{"moire_amp", "moire_fx", "moire_fy"},
        [](const Tensor& x, const AugmentorParams& p, Rng& rng) {
          double phase = rng.uniform(p.moire_phase_lo, p.moire_phase_hi);
          return apply_moire(x, p.moire_amp, p.moire_fx, p.moire_fy, phase);
        }}},
      {"geometric",
       {{"A"},
        [](const Tensor& x, const AugmentorParams& p, Rng&) {
          return apply_geometric(x, p.A);
        }}},
      {"photometric",
       {{"photo_alpha", "photo_beta", "photo_gamma"},
        [](const Tensor& x, const AugmentorParams& p, Rng&) {
          return apply_photometric(x, p.photo_alpha, p.photo_gamma,
                                   p.photo_beta);
        }}},
      {"additive",
       {{"noise_sigma"},
        [](const Tensor& x, const AugmentorParams& p, Rng& rng) {
          return apply_additive(x, p.noise_sigma, rng);
        }}},
      {"filter",
       {{"kernel_raw"},
        [](const Tensor& x, const AugmentorParams& p, Rng&) {
          return apply_filter(x, p.kernel_raw);
        }}},
      {"compression",
       {{"mask"},
        [](const Tensor& x, const AugmentorParams& p, Rng&) {
          Tensor q = make_quant_table(x.shape()[0], x.shape()[1],
                                      p.comp_table_scale);
          return apply_compression(x, p.mask, p.quant_sharpness, q);
        }}},
  };
  return specs;
}

std::vector<std::pair<std::string, Tensor*>> select_params(
    AugmentorParams& p, const std::vector<std::string>& names) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : p.all_tensors()) {
    for (const std::string& want : names) {
      if (name == want) out.emplace_back(name, t);
    }
  }
  return out;
}

}  // namespace

PretrainReport pretrain_augmentor(AugmentorParams& params,
                                  const std::string& module,
                                  const TargetFn& target, int pairs,
                                  const PretrainConfig& cfg) {
  auto it = module_specs().find(module);
  if (it == module_specs().end()) {
    std::string valid;
    for (auto& [name, spec] : module_specs()) {
      if (!valid.empty()) valid += ", ";
      valid += name;
    }
    throw ConfigError("unknown pretraining module '" + module +
                      "'; valid: " + valid);
  }
  if (pairs < 0) throw ConfigError("pair count must be nonnegative");
  if (cfg.lr <= 0) throw ConfigError("pretraining learning rate must be positive");
  const ModuleSpec& spec = it->second;

  // Fixed synthetic inputs and targets; the target's RNG stream per pair is
  // reused for the fitted module so stochastic draws line up inside a pair.
  Rng data_rng(cfg.seed);
  std::vector<Tensor> xs, ys;
  std::vector<uint64_t> pair_seeds;
  for (int i = 0; i < pairs; ++i) {
    Tensor x({cfg.img_h, cfg.img_w, cfg.img_c});
    for (double& v : x.vec()) v = data_rng.uniform(0.05, 0.95);
    uint64_t ps = cfg.seed * 1000003u + uint64_t(i) * 2654435761u + 17u;
    Rng trng(ps);
    xs.push_back(x);
    ys.push_back(target(x, trng));
    pair_seeds.push_back(ps);
  }

  Adam opt(cfg.lr);
  int steps = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = 0; i < pairs; ++i) {
      // The engine rejects non-finite forward values eagerly; surface those
      // as divergence with the step index attached.
      try {
        Tape tape;
        AugmentorParams leaves = params.as_leaves(tape, true);
        Rng op_rng(pair_seeds[i]);
        Tensor yhat = spec.forward(xs[i], leaves, op_rng);
        Tensor loss = add(mse(yhat, ys[i]), one_minus(ssim(yhat, ys[i])));
        if (!std::isfinite(loss.item())) {
          throw EngineError("loss is not finite");
        }
        tape.backward(loss);
        auto fitted = select_params(leaves, spec.names);
        std::vector<Tensor> grads;
        for (auto& [name, t] : fitted) grads.push_back(tape.grad(*t));
        check_finite_grads(grads, "pretraining", steps);
        opt.step(select_params(params, spec.names), grads);
      } catch (const EngineError& e) {
        throw ConvergenceError("pretraining diverged at step " +
                               std::to_string(steps) + ": " + e.what());
      }
      clamp_params(params);
      ++steps;
    }
  }

  PretrainReport report;
  report.module = module;
  report.pairs = pairs;
  report.steps = steps;
  if (pairs > 0) {
    double tm = 0, ts = 0;
    for (int i = 0; i < pairs; ++i) {
      Rng op_rng(pair_seeds[i]);
      Tensor yhat = spec.forward(xs[i], params, op_rng);
      tm += mse(yhat, ys[i]).item();
      ts += ssim(yhat, ys[i]).item();
    }
    report.final_mse = tm / pairs;
    report.final_ssim = ts / pairs;
  }
  return report;
}

PretrainReport pretrain_augmentor(AugmentorParams& params,
                                  const std::string& module,
                                  const std::string& profile, double severity,
                                  int pairs, const PretrainConfig& cfg) {
  TargetFn fn = [&profile, severity](const Tensor& x, Rng& rng) {
    return manual_augment(x, profile, severity, rng);
  };
  return pretrain_augmentor(params, module, fn, pairs, cfg);
}

}  // namespace tiacam
