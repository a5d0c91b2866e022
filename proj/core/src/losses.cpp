#include "tiacam/losses.hpp"

#include <cmath>

#include "tiacam/error.hpp"
#include "tiacam/rng.hpp"

namespace tiacam {

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw EngineError("mse shapes differ: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor ssim(const Tensor& a, const Tensor& b, int window, double c1,
            double c2) {
  if (a.shape() != b.shape()) {
    throw EngineError("ssim shapes differ: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  if (a.shape().size() != 3 || a.shape()[0] < window ||
      a.shape()[1] < window) {
    throw ConfigError("ssim needs an {H,W,C} image at least " +
                      std::to_string(window) + " pixels on a side");
  }
  Tensor mu_a = avg_pool(a, window, 1);
  Tensor mu_b = avg_pool(b, window, 1);
  Tensor var_a = sub(avg_pool(mul(a, a), window, 1), mul(mu_a, mu_a));
  Tensor var_b = sub(avg_pool(mul(b, b), window, 1), mul(mu_b, mu_b));
  Tensor cov = sub(avg_pool(mul(a, b), window, 1), mul(mu_a, mu_b));
  Tensor num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), c1),
                   add_scalar(mul_scalar(cov, 2.0), c2));
  Tensor den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                   add_scalar(add(var_a, var_b), c2));
  return mean(div(num, den));
}

Tensor clamp_prob(const Tensor& p) { return clamp(p, 1e-7, 1.0 - 1e-7); }

Tensor loss_disc(const Tensor& p_pos_clean, const Tensor& p_pos_aug,
                 const Tensor& p_neg_clean, const Tensor& p_neg_aug) {
  Tensor t = add(add(log(clamp_prob(p_pos_clean)),
                     log(clamp_prob(p_pos_aug))),
                 add(log(one_minus(clamp_prob(p_neg_clean))),
                     log(one_minus(clamp_prob(p_neg_aug)))));
  return neg(mean(t));
}

Tensor loss_adv(const Tensor& p_clean, const Tensor& p_aug) {
  return mean(add(log(one_minus(clamp_prob(p_clean))),
                  log(one_minus(clamp_prob(p_aug)))));
}

Tensor loss_inv(const Tensor& f_clean, const Tensor& f_aug) {
  return one_minus(mean(cosine_rows(f_clean, f_aug)));
}

SemanticProbe::SemanticProbe(int h, int w, int c, int proj_dim, uint64_t seed)
    : h_(h), w_(w), c_(c) {
  if (h % 4 != 0 || w % 4 != 0 || h <= 0 || w <= 0 || c <= 0) {
    throw ConfigError(
        "semantic probe needs image extents divisible by 4 for its pyramid");
  }
  if (proj_dim <= 0) throw ConfigError("probe projection dim must be positive");
  Rng rng(seed);
  for (int stage = 0; stage < 3; ++stage) {
    int hs = h >> stage, ws = w >> stage;
    int flat = hs * ws * c;
    Tensor p({flat, proj_dim});
    for (double& v : p.vec()) v = rng.normal() / std::sqrt(double(flat));
    proj_.push_back(p);
  }
}

std::vector<Tensor> SemanticProbe::stages(const Tensor& img) const {
  if (img.shape() != Shape{h_, w_, c_}) {
    throw DataError("probe expects a {" + std::to_string(h_) + "," +
                    std::to_string(w_) + "," + std::to_string(c_) +
                    "} image, got " + shape_str(img.shape()));
  }
  std::vector<Tensor> out;
  Tensor cur = img;
  for (int stage = 0; stage < 3; ++stage) {
    if (stage > 0) cur = avg_pool(cur, 2, 2);
    int flat = proj_[stage].shape()[0];
    out.push_back(matmul(reshape(cur, {1, flat}), proj_[stage]));
  }
  return out;
}

Tensor SemanticProbe::loss(const Tensor& a, const Tensor& b) const {
  std::vector<Tensor> sa = stages(a), sb = stages(b);
  Tensor total = one_minus(cosine_rows(sa[0], sb[0]));
  for (int stage = 1; stage < 3; ++stage) {
    total = add(total, one_minus(cosine_rows(sa[stage], sb[stage])));
  }
  return total;
}

}  // namespace tiacam
