#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

struct DiscriminatorConfig {
  int feature_dim = 64;  // image and text features share this width
  int hidden = 64;
  int layers = 2;
  int heads = 2;
  int ff_hidden = 128;
};

/// Pair discriminator: a pre-norm transformer over the 3-token sequence
/// [CLS; P z_img; P z_txt] with a shared input projection P (which is what
/// forces the image and text feature widths to match), multi-head attention
/// by column slicing, GELU feed-forward, a final layer norm, and a 2-logit
/// head over the CLS token. The head starts at zero so an untrained
/// discriminator outputs exactly 0.5.
class PairDiscriminator {
 public:
  PairDiscriminator(const DiscriminatorConfig& cfg, Rng& init);

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor*>> parameters();

  class Bound {
   public:
    /// z_img and z_txt are {N, feature_dim}; returns {N, 2} logits. When
    /// attn_out is given, every per-layer per-head attention matrix of every
    /// row is appended to it ({3,3} each).
    Tensor forward(const Tensor& z_img, const Tensor& z_txt,
                   std::vector<Tensor>* attn_out = nullptr) const;

   private:
    friend class PairDiscriminator;
    PairDiscriminator* model_ = nullptr;
    std::vector<Tensor> leaves_;
  };
  Bound bind(Tape& tape, bool requires_grad = true);
  /// Bound view over externally supplied leaves in parameters() order.
  Bound bind_leaves(std::vector<Tensor> leaves);

  /// Untracked convenience forward.
  Tensor infer_logits(const Tensor& z_img, const Tensor& z_txt);

 private:
  DiscriminatorConfig cfg_;
  std::vector<Tensor> store_;        // parameter storage
  std::vector<std::string> names_;   // parallel names
};

/// Column 0 of the row-softmax over logits: the match probability, {N,1}.
Tensor match_prob(const Tensor& logits);

}  // namespace tiacam
