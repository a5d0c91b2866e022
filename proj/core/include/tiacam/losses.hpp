#pragma once

#include <cstdint>
#include <vector>

#include "tiacam/tensor.hpp"

namespace tiacam {

/// Mean squared error over all elements, {1}.
Tensor mse(const Tensor& a, const Tensor& b);

/// Mean structural similarity over dense square windows (uniform window,
/// stride 1) with stability constants c1, c2. Images are {H,W,C}; windows
/// must fit. ssim(x,x) == 1 exactly.
Tensor ssim(const Tensor& a, const Tensor& b, int window = 8,
            double c1 = 1e-4, double c2 = 9e-4);

/// Probabilities are clamped into [1e-7, 1-1e-7] before any log, in-graph.
Tensor clamp_prob(const Tensor& p);

/// Discriminator objective on four match-probability columns ({N,1} or {N}):
/// p_pos_* come from matched pairs (clean and distorted features vs own
/// anchor), p_neg_* from mismatched ones.
/// -mean[log p1 + log p2 + log(1-p3) + log(1-p4)]; 2.772589 at all-0.5.
Tensor loss_disc(const Tensor& p_pos_clean, const Tensor& p_pos_aug,
                 const Tensor& p_neg_clean, const Tensor& p_neg_aug);

/// Augmentor objective: mean[log(1-p(F,E+)) + log(1-p(F',E+))];
/// -1.386294 at all-0.5. The augmentor maximizes confusion by ascending it.
Tensor loss_adv(const Tensor& p_clean, const Tensor& p_aug);

/// Invariance: 1 - mean row cosine between clean and distorted features.
Tensor loss_inv(const Tensor& f_clean, const Tensor& f_aug);

/// Frozen three-stage random-projection pyramid for content preservation:
/// projections of the full image and of one and two rounds of 2x average
/// pooling. Weights are seeded constants outside every tape.
class SemanticProbe {
 public:
  SemanticProbe(int h, int w, int c, int proj_dim, uint64_t seed);

  /// Three {1, proj_dim} stage encodings of an {H,W,C} image.
  std::vector<Tensor> stages(const Tensor& img) const;

  /// Sum over stages of (1 - cosine). Zero for identical images.
  Tensor loss(const Tensor& a, const Tensor& b) const;

 private:
  int h_, w_, c_;
  std::vector<Tensor> proj_;  // one {flat, proj_dim} matrix per stage
};

}  // namespace tiacam
