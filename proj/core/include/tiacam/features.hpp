#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tiacam/rng.hpp"
#include "tiacam/tensor.hpp"

namespace tiacam {

/// Maps an {H,W,C} image to a {1,D} feature row.
class BackboneProvider {
 public:
  virtual ~BackboneProvider() = default;
  virtual int dim() const = 0;
  virtual Tensor encode(const Tensor& image) = 0;
  /// True when encode() propagates gradients to the pixels.
  virtual bool differentiable() const = 0;
};

/// Frozen random projection of flattened pixels: tanh hidden layer plus a
/// linear readout, zero biases (a zero image maps to the zero vector). The
/// weights are seeded constants and never enter any tape, so gradients flow
/// through the backbone to the pixels but the backbone itself cannot drift.
class ProjectionBackbone : public BackboneProvider {
 public:
  ProjectionBackbone(int h, int w, int c, int hidden, int out, uint64_t seed);

  int dim() const override { return out_; }
  Tensor encode(const Tensor& image) override;
  bool differentiable() const override { return true; }

 private:
  int h_, w_, c_, hidden_, out_;
  Tensor w1_, w2_;
};

/// Embedding lookup keyed by sample id, for bundles produced by an external
/// encoder. It cannot encode pixels, which is what makes it unusable for
/// training against distorted images.
class PrecomputedBackbone : public BackboneProvider {
 public:
  PrecomputedBackbone(int dim,
                      std::unordered_map<std::string, std::vector<double>> rows);

  int dim() const override { return dim_; }
  Tensor encode(const Tensor&) override;  // always throws ConfigError
  bool differentiable() const override { return false; }

  Tensor lookup(const std::string& id) const;  // {1,dim}
  bool contains(const std::string& id) const;
  size_t size() const { return rows_.size(); }

 private:
  int dim_;
  std::unordered_map<std::string, std::vector<double>> rows_;
};

struct ExtractorConfig {
  int in_dim = 64;
  int hidden = 128;
  int proj_hidden = 64;
  int out_dim = 64;
  int blocks = 3;
  double dropout = 0.1;
  bool normalize_output = true;
};

/// Residual MLP that maps backbone features to the invariant space:
/// input linear+BN+ReLU+dropout, `blocks` residual units, a fusion layer of
/// the same shape, and a two-linear projection head with a final BN,
/// optionally l2-normalizing output rows.
class InvariantExtractor {
 public:
  InvariantExtractor(const ExtractorConfig& cfg, Rng& init);

  const ExtractorConfig& config() const { return cfg_; }

  /// Trainable tensors with stable unique names.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  /// BatchNorm running statistics (not trainable, mutated by training mode).
  std::vector<std::pair<std::string, Tensor*>> buffers();

  /// Tape-bound view of the extractor. Leaf tensors share buffers with the
  /// model so optimizer updates land in place; running stats stay untracked.
  class Bound {
   public:
    /// x is {N,in_dim}. Training mode draws dropout masks from rng and
    /// updates the running statistics; eval mode never touches rng.
    Tensor forward(const Tensor& x, bool training, Rng& rng) const;

   private:
    friend class InvariantExtractor;
    InvariantExtractor* model_ = nullptr;
    std::vector<Tensor> leaves_;
  };
  Bound bind(Tape& tape, bool requires_grad = true);

  /// Bound view over externally supplied leaf tensors in parameters() order,
  /// for gradient checks that probe parameters directly.
  Bound bind_leaves(std::vector<Tensor> leaves);

  /// Convenience untracked forward in eval mode.
  Tensor infer(const Tensor& x);

 private:
  friend class Bound;
  struct Linear {
    Tensor W, b;
  };
  struct Bn {
    Tensor gamma, beta, mean, var;
  };
  struct Block {
    Linear l1, l2;
    Bn bn1, bn2;
  };

  ExtractorConfig cfg_;
  Linear input_;
  Bn input_bn_;
  std::vector<Block> blocks_;
  Linear fusion_;
  Bn fusion_bn_;
  Linear proj1_;
  Bn proj_bn_;
  Linear proj2_;
  Bn out_bn_;
};

/// Named class anchors in the text-embedding space, one {d} row per class.
struct AnchorSet {
  std::vector<std::string> names;
  Tensor E;  // {k, d}

  int count() const { return E.shape()[0]; }
  int dim() const { return E.shape()[1]; }
  Tensor row(int i) const;  // {1, d}
};

/// For each label, its own anchor row and a uniformly drawn anchor of a
/// different class. Throws when fewer than two classes exist.
std::pair<Tensor, Tensor> sample_pair_batch(const AnchorSet& anchors,
                                            const std::vector<int>& labels,
                                            Rng& rng);

}  // namespace tiacam
