#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tiacam/augment.hpp"
#include "tiacam/discriminator.hpp"
#include "tiacam/features.hpp"
#include "tiacam/losses.hpp"
#include "tiacam/optim.hpp"
#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

struct TrainConfig {
  double lr = 1e-4;
  double lambda_adv = 1.0;
  double lambda_sem = 1.0;
  double lambda_c = 1e-4;  // codebook weight decay, read by registration
  int batch = 8;
  int n_disc = 1;  // discriminator steps per round
  int n_aug = 1;   // distortion-parameter steps per round
  int n_feat = 1;  // extractor steps per round
  int rounds = 100;
  uint64_t seed = 0;
  // The confusion term always enters the extractor loss; the invariance term
  // is on by default and can be dropped to study the pure adversarial game.
  bool extractor_uses_inv = true;
  // Fixed-augmentation baseline: distort with the manual "all" profile at a
  // per-image severity drawn from U(0, manual_severity) instead of the
  // learned chain, and skip the distortion phase. Every budget field keeps
  // its meaning so learned and manual runs stay comparable.
  bool augmentor_learned = true;
  double manual_severity = 0.5;
  int checkpoint_every = 0;  // rounds between checkpoint callbacks, 0 = never
  ClampConfig clamp;

  void validate() const;  // ConfigError on out-of-range values
};

/// Everything the alternating optimization mutates: the three parameter sets,
/// one optimizer per set, and the RNG stream that drives augmentation draws,
/// batch sampling, and dropout.
struct TrainState {
  AugmentorParams aug;
  InvariantExtractor extractor;
  PairDiscriminator disc;
  Adam opt_disc;
  Adam opt_feat;
  Adam opt_aug;
  Rng rng;
  int64_t round = 0;
  int64_t step = 0;
};

TrainState make_train_state(const TrainConfig& cfg, const ExtractorConfig& ext,
                            const DiscriminatorConfig& disc, int img_h,
                            int img_w, int img_c, int kernel_size = 3);

struct Batch {
  std::vector<Tensor> images;  // each {H,W,C} in [0,1]
  std::vector<int> labels;     // anchor row per image
};

struct TrainSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

/// Loss values observed during one phase step. Fields not touched by a phase
/// stay NaN so the metrics log never reports a stale number as fresh.
struct StepLosses {
  double disc = std::numeric_limits<double>::quiet_NaN();
  double adv = std::numeric_limits<double>::quiet_NaN();
  double inv = std::numeric_limits<double>::quiet_NaN();
  double sem = std::numeric_limits<double>::quiet_NaN();
};

/// Gradient magnitudes captured from inside the distortion phase, used to
/// assert the stop-gradient contract on the live implementation.
struct AugStepDebug {
  double max_abs_extractor_grad = 0.0;  // must be exactly zero
  double max_abs_aug_grad = 0.0;        // generically nonzero
};

struct RoundMetrics {
  int64_t round = 0;
  double loss_disc = 0, loss_adv = 0, loss_inv = 0, loss_sem = 0, mean_cos = 0;
};

/// Alternating three-phase optimization. Each phase updates exactly one
/// parameter set; the other two are read-only and stay bit-identical.
class Trainer {
 public:
  /// Throws ConfigError when the backbone cannot encode pixels, when the
  /// anchor set cannot supply negatives, or when dimensions disagree.
  Trainer(TrainConfig cfg, BackboneProvider& backbone, AnchorSet anchors,
          SemanticProbe probe);

  const TrainConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }

  StepLosses step_discriminator(TrainState& state, const Batch& batch);
  StepLosses step_extractor(TrainState& state, const Batch& batch);
  StepLosses step_augmentor(TrainState& state, const Batch& batch,
                            AugStepDebug* debug = nullptr);

  /// Invariance loss 1 - mean cos(F, F') on a batch, replaying augmentation
  /// draws from the supplied RNG copy. train_mode uses batch statistics and
  /// matches the objective the extractor phase descends (dropout disabled);
  /// otherwise the extractor runs in eval mode. Running statistics are
  /// restored afterwards either way.
  double measure_invariance(TrainState& state, const Batch& batch, Rng rng,
                            bool train_mode = false);

  /// Runs cfg.rounds rounds of n_disc/n_aug/n_feat steps, sampling batches
  /// from the set. on_checkpoint fires every checkpoint_every rounds.
  std::vector<RoundMetrics> train(
      TrainState& state, const TrainSet& set,
      const std::function<void(TrainState&, int64_t)>& on_checkpoint = {});

  Batch sample_batch(const TrainSet& set, Rng& rng) const;

 private:
  // Augmented images, clean embeddings, augmented embeddings for a batch.
  // Augmentation draws always come first in a phase so that replaying a
  // saved RNG copy through measure_invariance sees identical noise.
  struct Encoded {
    Tensor z_clean;  // {N, backbone dim}
    Tensor z_aug;
  };
  Encoded encode_batch(const TrainState& state, const Batch& batch, Rng& rng);

  Tensor distort(const Tensor& x, const AugmentorParams& p, Rng& rng) const;

  TrainConfig cfg_;
  BackboneProvider& backbone_;
  AnchorSet anchors_;
  SemanticProbe probe_;
};

/// Writes `round,loss_disc,loss_adv,loss_inv,loss_sem,mean_cos` rows after a
/// comment line recording the loss weights and seed.
void write_metrics_csv(const std::string& path,
                       const std::vector<RoundMetrics>& rows,
                       const TrainConfig& cfg);

/// One distortion module fitted to reproduce a target transform from image
/// pairs. The target draws and the fitted module's draws come from identical
/// per-pair RNG streams, so stochastic amplitudes are identifiable from
/// reconstruction losses.
struct PretrainConfig {
  double lr = 0.05;
  int epochs = 3;
  int img_h = 16, img_w = 16, img_c = 1;
  uint64_t seed = 11;
};

struct PretrainReport {
  std::string module;
  int pairs = 0;
  int steps = 0;
  double final_mse = 0.0;
  double final_ssim = 0.0;
};

using TargetFn = std::function<Tensor(const Tensor&, Rng&)>;

/// Fits the named module's parameters (in place) so its output matches the
/// target generator, minimizing mse + (1 - ssim). module is one of the stage
/// names: moire, geometric, photometric, additive, filter, compression.
PretrainReport pretrain_augmentor(AugmentorParams& params,
                                  const std::string& module,
                                  const TargetFn& target, int pairs,
                                  const PretrainConfig& cfg);

/// Same, with the target drawn from a manual distortion profile at the given
/// severity.
PretrainReport pretrain_augmentor(AugmentorParams& params,
                                  const std::string& module,
                                  const std::string& profile, double severity,
                                  int pairs, const PretrainConfig& cfg);

}  // namespace tiacam
