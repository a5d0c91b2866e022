#include "tiacam/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tiacam/error.hpp"

namespace tiacam {
namespace {

constexpr double kTwoPi = 6.283185307179586;

void require_image(const Tensor& x, const char* who) {
  if (x.shape().size() != 3) {
    throw ConfigError(std::string(who) + " expects an {H,W,C} image, got " +
                      shape_str(x.shape()));
  }
}

void require_shape(const Tensor& t, const Shape& want, const char* name) {
  if (t.shape() != want) {
    throw ConfigError(std::string(name) + " must have shape " +
                      shape_str(want) + ", got " + shape_str(t.shape()));
  }
}

double clamp_to(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

}  // namespace

AugmentorParams AugmentorParams::identity(int h, int w, int channels,
                                          int kernel_size) {
  if (h <= 0 || w <= 0 || channels <= 0) {
    throw ConfigError("identity params need positive image extents");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("filter kernel size must be odd and positive");
  }
  AugmentorParams p;
  p.A = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  p.photo_alpha = Tensor::full({channels}, 1.0);
  p.photo_beta = Tensor::zeros({channels});
  p.photo_gamma = Tensor::full({channels}, 1.0);
  p.noise_sigma = Tensor::zeros({1});
  p.sp_rate = Tensor::zeros({1});
  p.sp_temp = Tensor::full({1}, 0.5);
  // softplus(-30) ~ 9e-14 and softplus(log(e-1)) == 1, so the normalized
  // kernel is a delta to machine precision.
  p.kernel_raw = Tensor::full({kernel_size, kernel_size}, -30.0);
  p.kernel_raw.vec()[(kernel_size / 2) * kernel_size + kernel_size / 2] =
      std::log(std::exp(1.0) - 1.0);
  p.mask = Tensor::full({h, w}, 1.0);
  p.quant_sharpness = Tensor::full({1}, 16.0);
  p.moire_amp = Tensor::zeros({1});
  p.moire_fx = Tensor::zeros({1});
  p.moire_fy = Tensor::zeros({1});
  p.comp_enabled = false;  // pass-through quantization
  return p;
}

std::vector<std::pair<std::string, Tensor*>> AugmentorParams::trainable() {
  return {{"A", &A},
          {"photo_alpha", &photo_alpha},
          {"photo_beta", &photo_beta},
          {"photo_gamma", &photo_gamma},
          {"noise_sigma", &noise_sigma},
          {"sp_rate", &sp_rate},
          {"kernel_raw", &kernel_raw},
          {"mask", &mask},
          {"moire_amp", &moire_amp},
          {"moire_fx", &moire_fx},
          {"moire_fy", &moire_fy}};
}

std::vector<std::pair<std::string, Tensor*>> AugmentorParams::all_tensors() {
  auto v = trainable();
  v.emplace_back("sp_temp", &sp_temp);
  v.emplace_back("quant_sharpness", &quant_sharpness);
  return v;
}

AugmentorParams AugmentorParams::as_leaves(Tape& tape,
                                           bool requires_grad) const {
  AugmentorParams out = *this;
  auto fields = out.trainable();
  for (auto& [name, t] : fields) *t = tape.leaf(*t, requires_grad);
  out.sp_temp = tape.leaf(out.sp_temp, false);
  out.quant_sharpness = tape.leaf(out.quant_sharpness, false);
  return out;
}

Tensor apply_geometric(const Tensor& x, const Tensor& A) {
  require_image(x, "apply_geometric");
  require_shape(A, {3, 3}, "homography");
  Tensor grid = homography_grid(A, x.shape()[0], x.shape()[1]);
  return bilinear_grid_sample(x, grid);
}

Tensor apply_photometric(const Tensor& x, const Tensor& alpha,
                         const Tensor& gamma, const Tensor& beta) {
  require_image(x, "apply_photometric");
  int c = x.shape()[2];
  require_shape(alpha, {c}, "photometric alpha");
  require_shape(gamma, {c}, "photometric gamma");
  require_shape(beta, {c}, "photometric beta");
  for (double g : gamma.vec()) {
    if (!(g > 0.0)) {
      throw ConfigError("photometric gamma must be positive, got " +
                        std::to_string(g));
    }
  }
  return add(mul(pow_channels(relu(x), gamma), alpha), beta);
}

Tensor apply_additive(const Tensor& x, const Tensor& sigma, Rng& rng) {
  require_image(x, "apply_additive");
  require_shape(sigma, {1}, "noise sigma");
  Tensor z(x.shape());
  for (double& v : z.vec()) v = rng.normal();
  return add(x, mul(z, sigma));
}

Tensor apply_salt_pepper(const Tensor& x, const Tensor& rate,
                         const Tensor& temperature, Rng& rng) {
  require_image(x, "apply_salt_pepper");
  require_shape(rate, {1}, "salt-pepper rate");
  require_shape(temperature, {1}, "salt-pepper temperature");
  double r = rate.vec()[0];
  if (r < 0.0 || r >= 1.0) {
    throw ConfigError("salt-pepper rate must be in [0,1), got " +
                      std::to_string(r));
  }
  if (!(temperature.vec()[0] > 0.0)) {
    throw ConfigError("salt-pepper temperature must be positive");
  }
  int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];

  // Class log-probs {keep, salt, pepper}; epsilon keeps log finite at rate 0.
  Tensor log_keep = log(add_scalar(neg(rate), 1.0 + 1e-12));
  Tensor log_tail = log(add_scalar(mul_scalar(rate, 0.5), 1e-12));

  Tensor gk({h, w}), gs({h, w}), gp({h, w});
  for (int i = 0; i < h * w; ++i) gk.vec()[i] = rng.gumbel();
  for (int i = 0; i < h * w; ++i) gs.vec()[i] = rng.gumbel();
  for (int i = 0; i < h * w; ++i) gp.vec()[i] = rng.gumbel();

  Tensor sk = div(add(gk, log_keep), temperature);
  Tensor ss = div(add(gs, log_tail), temperature);
  Tensor sp = div(add(gp, log_tail), temperature);

  // Constant shift for stable softmax; softmax is shift-invariant so the
  // gradient stays exact.
  Tensor shift({h, w});
  for (int i = 0; i < h * w; ++i) {
    shift.vec()[i] =
        std::max(sk.vec()[i], std::max(ss.vec()[i], sp.vec()[i]));
  }
  Tensor ek = exp(sub(sk, shift));
  Tensor es = exp(sub(ss, shift));
  Tensor ep = exp(sub(sp, shift));
  Tensor den = add(add(ek, es), ep);
  Tensor w_keep = div(ek, den);
  Tensor w_salt = div(es, den);
  // Pepper contributes zero; broadcast the salt weight over channels.
  return add(mul(x, w_keep), mul(Tensor::full({h, w, c}, 1.0), w_salt));
}

Tensor effective_kernel(const Tensor& raw) {
  if (raw.shape().size() != 2 || raw.shape()[0] != raw.shape()[1]) {
    throw ConfigError("filter kernel must be square, got " +
                      shape_str(raw.shape()));
  }
  Tensor sp = softplus(raw);
  return div(sp, sum(sp));
}

Tensor apply_filter(const Tensor& x, const Tensor& kernel_raw) {
  require_image(x, "apply_filter");
  return conv2d(x, effective_kernel(kernel_raw));
}

Tensor make_quant_table(int h, int w, double scale) {
  if (h % kDctBlock != 0 || w % kDctBlock != 0 || h <= 0 || w <= 0) {
    throw ConfigError("quant table extents must be positive multiples of 8");
  }
  if (!(scale > 0.0)) throw ConfigError("quant table scale must be positive");
  static const double base[kDctBlock][kDctBlock] = {
      {16, 11, 10, 16, 24, 40, 51, 61},    {12, 12, 14, 19, 26, 58, 60, 55},
      {14, 13, 16, 24, 40, 57, 69, 56},    {14, 17, 22, 29, 51, 87, 80, 62},
      {18, 22, 37, 56, 68, 109, 103, 77},  {24, 35, 55, 64, 81, 104, 113, 92},
      {49, 64, 78, 87, 103, 121, 120, 101}, {72, 92, 95, 98, 112, 100, 103, 99}};
  Tensor q({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      q.vec()[i * w + j] = base[i % kDctBlock][j % kDctBlock] * scale;
    }
  }
  return q;
}

Tensor apply_compression(const Tensor& x, const Tensor& mask,
                         const Tensor& sharpness, const Tensor& quant_table) {
  require_image(x, "apply_compression");
  int h = x.shape()[0], w = x.shape()[1];
  if (mask.shape() != Shape{h, w}) {
    throw ConfigError("compression mask shape " + shape_str(mask.shape()) +
                      " does not match the image block grid {" +
                      std::to_string(h) + "," + std::to_string(w) + "}");
  }
  require_shape(sharpness, {1}, "quantization sharpness");
  require_shape(quant_table, Shape{h, w}, "quant table");
  for (double q : quant_table.vec()) {
    if (!(q > 0.0)) throw ConfigError("quant table entries must be positive");
  }
  Tensor coeff = dct2d(mul_scalar(x, 255.0));
  Tensor z = div(mul(coeff, mask), quant_table);
  Tensor rec = mul(smooth_quantize(z, sharpness), quant_table);
  return mul_scalar(idct2d(rec), 1.0 / 255.0);
}

Tensor apply_moire(const Tensor& x, const Tensor& amp, const Tensor& fx,
                   const Tensor& fy, double phase) {
  require_image(x, "apply_moire");
  require_shape(amp, {1}, "moire amplitude");
  require_shape(fx, {1}, "moire fx");
  require_shape(fy, {1}, "moire fy");
  int h = x.shape()[0], w = x.shape()[1];
  Tensor u({h, w}), v({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      u.vec()[i * w + j] = w > 1 ? double(j) / (w - 1) : 0.0;
      v.vec()[i * w + j] = h > 1 ? double(i) / (h - 1) : 0.0;
    }
  }
  Tensor t = add(mul(u, fx), mul(v, fy));
  Tensor s = sin(add_scalar(mul_scalar(t, kTwoPi), phase));
  return add(x, mul(s, amp));
}

std::vector<Stage> default_stage_order() {
  return {Stage::moire,    Stage::geometric, Stage::photometric,
          Stage::additive, Stage::filter,    Stage::compression};
}

std::vector<Stage> stage_order_from_names(
    const std::vector<std::string>& names) {
  static const std::map<std::string, Stage> lut = {
      {"moire", Stage::moire},         {"geometric", Stage::geometric},
      {"photometric", Stage::photometric}, {"additive", Stage::additive},
      {"filter", Stage::filter},       {"compression", Stage::compression}};
  std::vector<Stage> order;
  for (const auto& n : names) {
    auto it = lut.find(n);
    if (it == lut.end()) {
      std::string valid;
      for (const auto& [k, v] : lut) valid += (valid.empty() ? "" : ", ") + k;
      throw ConfigError("unknown stage '" + n + "' (valid: " + valid + ")");
    }
    order.push_back(it->second);
  }
  return order;
}

Tensor compose_augment(const Tensor& x, const AugmentorParams& p, Rng& rng,
                       const std::vector<Stage>& order) {
  require_image(x, "compose_augment");
  Tensor cur = x;
  for (Stage s : order) {
    switch (s) {
      case Stage::moire: {
        // Phase is drawn every call (even at zero amplitude) so the rng
        // stream does not depend on parameter values.
        double lo = p.moire_phase_lo, hi = p.moire_phase_hi;
        double phase = lo + rng.uniform() * (hi - lo);
        cur = apply_moire(cur, p.moire_amp, p.moire_fx, p.moire_fy, phase);
        break;
      }
      case Stage::geometric:
        cur = apply_geometric(cur, p.A);
        break;
      case Stage::photometric:
        cur = apply_photometric(cur, p.photo_alpha, p.photo_gamma,
                                p.photo_beta);
        break;
      case Stage::additive: {
        cur = apply_additive(cur, p.noise_sigma, rng);
        // Salt-pepper is exact identity at rate 0, so it only enters the
        // graph (and consumes rng draws) when active.
        if (p.sp_rate.vec()[0] > 0.0) {
          cur = apply_salt_pepper(cur, p.sp_rate, p.sp_temp, rng);
        }
        break;
      }
      case Stage::filter:
        cur = apply_filter(cur, p.kernel_raw);
        break;
      case Stage::compression:
        if (p.comp_enabled) {
          Tensor q = make_quant_table(cur.shape()[0], cur.shape()[1],
                                      p.comp_table_scale);
          cur = apply_compression(cur, p.mask, p.quant_sharpness, q);
        }
        break;
    }
  }
  return cur;
}

void clamp_params(AugmentorParams& p, const ClampConfig& c) {
  auto& a = p.A.vec();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      double center = i == j ? 1.0 : 0.0;
      a[i * 3 + j] = clamp_to(a[i * 3 + j], center - c.geo_linear_dev,
                              center + c.geo_linear_dev);
    }
  }
  a[2] = clamp_to(a[2], -c.geo_translate_dev, c.geo_translate_dev);
  a[5] = clamp_to(a[5], -c.geo_translate_dev, c.geo_translate_dev);
  a[6] = clamp_to(a[6], -c.geo_perspective_dev, c.geo_perspective_dev);
  a[7] = clamp_to(a[7], -c.geo_perspective_dev, c.geo_perspective_dev);
  a[8] = 1.0;
  for (double& v : p.photo_alpha.vec()) v = clamp_to(v, c.alpha_lo, c.alpha_hi);
  for (double& v : p.photo_beta.vec()) v = clamp_to(v, -c.beta_dev, c.beta_dev);
  for (double& v : p.photo_gamma.vec()) v = clamp_to(v, c.gamma_lo, c.gamma_hi);
  p.noise_sigma.vec()[0] = clamp_to(p.noise_sigma.vec()[0], 0.0, c.sigma_hi);
  p.sp_rate.vec()[0] = clamp_to(p.sp_rate.vec()[0], 0.0, c.sp_rate_hi);
  p.sp_temp.vec()[0] = clamp_to(p.sp_temp.vec()[0], c.sp_temp_lo, c.sp_temp_hi);
  for (double& v : p.kernel_raw.vec()) {
    v = clamp_to(v, -c.kernel_raw_dev, c.kernel_raw_dev);
  }
  for (double& v : p.mask.vec()) v = clamp_to(v, 0.0, 1.0);
  p.quant_sharpness.vec()[0] =
      clamp_to(p.quant_sharpness.vec()[0], c.sharpness_lo, c.sharpness_hi);
  p.moire_amp.vec()[0] = clamp_to(p.moire_amp.vec()[0], 0.0, c.moire_amp_hi);
  p.moire_fx.vec()[0] = clamp_to(p.moire_fx.vec()[0], 0.0, c.moire_freq_hi);
  p.moire_fy.vec()[0] = clamp_to(p.moire_fy.vec()[0], 0.0, c.moire_freq_hi);
}

const std::vector<std::string> kManualProfiles = {
    "additive", "photometric", "perspective", "jpeg",
    "moire",    "filtering",   "all"};

namespace {

Tensor manual_jpeg(const Tensor& x, double severity) {
  Tensor q =
      make_quant_table(x.shape()[0], x.shape()[1], 1.0 + 6.0 * severity);
  Tensor coeff = dct2d(mul_scalar(x, 255.0));
  Tensor rec(coeff.shape());
  int hw = x.shape()[0] * x.shape()[1];
  for (int i = 0; i < hw; ++i) {
    double qi = q.vec()[i];
    for (int ch = 0; ch < x.shape()[2]; ++ch) {
      int idx = i * x.shape()[2] + ch;
      rec.vec()[idx] = std::round(coeff.vec()[idx] / qi) * qi;
    }
  }
  return mul_scalar(idct2d(rec), 1.0 / 255.0);
}

Tensor manual_gaussian_blur(const Tensor& x, double std_dev) {
  const int k = 5;
  Tensor kernel({k, k});
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      double di = i - k / 2, dj = j - k / 2;
      double w = std::exp(-(di * di + dj * dj) / (2.0 * std_dev * std_dev));
      kernel.vec()[i * k + j] = w;
      sum += w;
    }
  }
  for (double& v : kernel.vec()) v /= sum;
  return conv2d(x, kernel);
}

}  // namespace

Tensor manual_augment(const Tensor& x, const std::string& profile,
                      double severity, Rng& rng) {
  require_image(x, "manual_augment");
  if (!(severity >= 0.0 && severity <= 1.0)) {
    throw ConfigError("severity must be in [0,1], got " +
                      std::to_string(severity));
  }
  if (std::find(kManualProfiles.begin(), kManualProfiles.end(), profile) ==
      kManualProfiles.end()) {
    std::string valid;
    for (const auto& p : kManualProfiles) {
      valid += (valid.empty() ? "" : ", ") + p;
    }
    throw ConfigError("unknown profile '" + profile + "' (valid: " + valid +
                      ")");
  }
  if (severity == 0.0) return x.clone();
  double s = severity;

  if (profile == "additive") {
    Tensor sigma = Tensor::full({1}, s * kManualSigmaMax);
    return apply_additive(x, sigma, rng);
  }
  if (profile == "photometric") {
    int c = x.shape()[2];
    auto u = [&](double d) { return (2.0 * rng.uniform() - 1.0) * d * s; };
    Tensor alpha = Tensor::full({c}, 1.0 + u(0.4));
    Tensor gamma = Tensor::full({c}, 1.0 + u(0.3));
    Tensor beta = Tensor::full({c}, u(0.15));
    return apply_photometric(x, alpha, gamma, beta);
  }
  if (profile == "perspective") {
    auto u = [&](double d) { return (2.0 * rng.uniform() - 1.0) * d * s; };
    Tensor A({3, 3}, {1 + u(0.15), u(0.15), u(3.0),       //
                      u(0.15), 1 + u(0.15), u(3.0),       //
                      u(0.004), u(0.004), 1.0});
    return apply_geometric(x, A);
  }
  if (profile == "jpeg") return manual_jpeg(x, s);
  if (profile == "moire") {
    Tensor amp = Tensor::full({1}, 0.12 * s);
    Tensor fx = Tensor::full({1}, 4.0 + rng.uniform() * 20.0);
    Tensor fy = Tensor::full({1}, 4.0 + rng.uniform() * 20.0);
    return apply_moire(x, amp, fx, fy, rng.uniform() * kTwoPi);
  }
  if (profile == "filtering") {
    double std_dev = 0.2 + rng.uniform() * 1.3 * s;
    return manual_gaussian_blur(x, std_dev);
  }
  // "all": every profile in the composition order, each with an independent
  // sub-severity drawn from U(0, s).
  Tensor cur = x.clone();
  for (const char* p :
       {"moire", "perspective", "photometric", "additive", "filtering",
        "jpeg"}) {
    cur = manual_augment(cur, p, s * rng.uniform(), rng);
  }
  return cur;
}

}  // namespace tiacam
