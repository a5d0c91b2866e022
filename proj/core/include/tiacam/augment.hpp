#pragma once

#include <string>
#include <vector>

#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

/// Learnable distortion parameters. Tensors so they can be tape leaves; the
/// trainable() subset is what the adversarial trainer updates.
struct AugmentorParams {
  Tensor A;             // {3,3} homography acting on (col,row,1)
  Tensor photo_alpha;   // {C} gain
  Tensor photo_beta;    // {C} offset
  Tensor photo_gamma;   // {C} exponent
  Tensor noise_sigma;   // {1} Gaussian noise scale
  Tensor sp_rate;       // {1} salt-pepper rate; stage active when > 0
  Tensor sp_temp;       // {1} Gumbel-softmax temperature (not trained)
  Tensor kernel_raw;    // {k,k} pre-normalization filter weights
  Tensor mask;          // {H,W} frequency mask in [0,1]
  Tensor quant_sharpness;  // {1} rounding surrogate sharpness (not trained)
  Tensor moire_amp;     // {1}
  Tensor moire_fx;      // {1} cycles across the image
  Tensor moire_fy;      // {1}
  double moire_phase_lo = 0.0;   // phase drawn uniformly per call
  double moire_phase_hi = 6.283185307179586;
  double comp_table_scale = 1.0;  // fixed quality scale of the quant table
  bool comp_enabled = true;  // pass-through quantization when false

  /// Exact pass-through configuration for images of the given extent.
  static AugmentorParams identity(int h, int w, int channels = 3,
                                  int kernel_size = 3);

  /// Tensors ascended by the adversarial trainer, with stable names.
  std::vector<std::pair<std::string, Tensor*>> trainable();
  /// Every tensor field, for serialization.
  std::vector<std::pair<std::string, Tensor*>> all_tensors();

  /// Copy whose tensor fields are tape leaves (buffers shared with *this, so
  /// in-place optimizer updates land back here).
  AugmentorParams as_leaves(Tape& tape, bool requires_grad = true) const;
};

/// Projection intervals for clamp_params.
struct ClampConfig {
  double geo_linear_dev = 0.15;
  double geo_translate_dev = 3.0;
  double geo_perspective_dev = 0.005;
  double alpha_lo = 0.3, alpha_hi = 2.0;
  double beta_dev = 0.3;
  double gamma_lo = 0.4, gamma_hi = 2.5;
  double sigma_hi = 0.25;
  double sp_rate_hi = 0.5;
  double sp_temp_lo = 0.05, sp_temp_hi = 2.0;
  double kernel_raw_dev = 30.0;
  double sharpness_lo = 1.0, sharpness_hi = 64.0;
  double moire_amp_hi = 0.25;
  double moire_freq_hi = 32.0;
};

// --- individual distortion operators -------------------------------------

/// Backward-warp x through homography A (zero padding outside).
Tensor apply_geometric(const Tensor& x, const Tensor& A);

/// alpha * max(x,0)^gamma + beta, per channel.
Tensor apply_photometric(const Tensor& x, const Tensor& alpha,
                         const Tensor& gamma, const Tensor& beta);

/// x + sigma * z with z ~ N(0,1) drawn from rng (reparameterized).
Tensor apply_additive(const Tensor& x, const Tensor& sigma, Rng& rng);

/// Per-pixel 3-way Gumbel-softmax over {keep, salt(1), pepper(0)} with class
/// probabilities {1-rate, rate/2, rate/2}; shared across channels.
Tensor apply_salt_pepper(const Tensor& x, const Tensor& rate,
                         const Tensor& temperature, Rng& rng);

/// Normalized effective kernel softplus(raw)/sum(softplus(raw)).
Tensor effective_kernel(const Tensor& raw);
/// Convolution with the softplus-normalized kernel.
Tensor apply_filter(const Tensor& x, const Tensor& kernel_raw);

/// Tiled 8x8 JPEG luminance quantization table scaled by `scale`.
Tensor make_quant_table(int h, int w, double scale);
/// Frequency-domain compression surrogate:
/// idct(Q(mask .* dct(255 x) / q) * q) / 255 with Q the smooth quantizer.
Tensor apply_compression(const Tensor& x, const Tensor& mask,
                         const Tensor& sharpness, const Tensor& quant_table);

/// x + amp * sin(2 pi (fx u + fy v) + phase) on [0,1]-normalized coords.
Tensor apply_moire(const Tensor& x, const Tensor& amp, const Tensor& fx,
                   const Tensor& fy, double phase);

// --- composition -----------------------------------------------------------

enum class Stage { moire, geometric, photometric, additive, filter, compression };

/// Application order: moire first, then geometry, photometry, noise,
/// filtering, compression (outermost last).
std::vector<Stage> default_stage_order();
std::vector<Stage> stage_order_from_names(const std::vector<std::string>& names);

/// Full differentiable distortion chain. Salt-pepper runs only when
/// sp_rate > 0; compression only when comp_enabled; the moire phase is drawn
/// from rng per call and excluded from gradients.
Tensor compose_augment(const Tensor& x, const AugmentorParams& p, Rng& rng,
                       const std::vector<Stage>& order = default_stage_order());

/// Idempotent in-place projection of every parameter into its valid range.
void clamp_params(AugmentorParams& p, const ClampConfig& c = ClampConfig());

// --- fixed manual distortions ----------------------------------------------

/// Severity scale for the manual additive profile: sigma = s * this.
constexpr double kManualSigmaMax = 0.12;

extern const std::vector<std::string> kManualProfiles;  // includes "all"

/// Non-learnable distortion with documented parameter ranges scaled by
/// severity in [0,1]; severity 0 is the identity for every profile. "all"
/// composes every profile with independent sub-severities drawn from
/// U(0, severity).
Tensor manual_augment(const Tensor& x, const std::string& profile,
                      double severity, Rng& rng);

}  // namespace tiacam
