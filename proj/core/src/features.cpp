#include "tiacam/features.hpp"

#include <cmath>

#include "tiacam/error.hpp"

namespace tiacam {
namespace {

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double s = std::sqrt(2.0 / fan_in);
  for (double& v : t.vec()) v = rng.normal() * s;
  return t;
}

// Random fan-in biases. Zero biases would let a narrow bottleneck start with
// every unit dead on nonnegative activations, and a single surviving unit
// makes the normalized output a constant direction for every input.
Tensor fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double bound = 1.0 / std::sqrt(double(fan_in));
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor tanh_op(const Tensor& x) {
  // tanh(x) = 2 sigmoid(2x) - 1, built from existing primitives.
  return add_scalar(mul_scalar(sigmoid(mul_scalar(x, 2.0)), 2.0), -1.0);
}

}  // namespace

ProjectionBackbone::ProjectionBackbone(int h, int w, int c, int hidden,
                                       int out, uint64_t seed)
    : h_(h), w_(w), c_(c), hidden_(hidden), out_(out) {
  if (h <= 0 || w <= 0 || c <= 0 || hidden <= 0 || out <= 0) {
    throw ConfigError("projection backbone dimensions must be positive");
  }
  Rng rng(seed);
  int in = h * w * c;
  w1_ = Tensor({in, hidden});
  for (double& v : w1_.vec()) v = rng.normal() / std::sqrt(double(in));
  w2_ = Tensor({hidden, out});
  for (double& v : w2_.vec()) v = rng.normal() / std::sqrt(double(hidden));
}

Tensor ProjectionBackbone::encode(const Tensor& image) {
  if (image.shape() != Shape{h_, w_, c_}) {
    throw DataError("backbone expects a {" + std::to_string(h_) + "," +
                    std::to_string(w_) + "," + std::to_string(c_) +
                    "} image, got " + shape_str(image.shape()));
  }
  Tensor flat = reshape(image, {1, h_ * w_ * c_});
  return matmul(tanh_op(matmul(flat, w1_)), w2_);
}

PrecomputedBackbone::PrecomputedBackbone(
    int dim, std::unordered_map<std::string, std::vector<double>> rows)
    : dim_(dim), rows_(std::move(rows)) {
  if (dim <= 0) throw ConfigError("embedding dim must be positive");
  for (const auto& [id, row] : rows_) {
    if (int(row.size()) != dim) {
      throw DataError("embedding for '" + id + "' has " +
                      std::to_string(row.size()) + " values, expected " +
                      std::to_string(dim));
    }
  }
}

Tensor PrecomputedBackbone::encode(const Tensor&) {
  throw ConfigError(
      "a precomputed embedding provider cannot encode images; training "
      "against distorted inputs needs a differentiable backbone");
}

Tensor PrecomputedBackbone::lookup(const std::string& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) {
    throw DataError("no embedding stored for id '" + id + "'");
  }
  return Tensor({1, dim_}, it->second);
}

bool PrecomputedBackbone::contains(const std::string& id) const {
  return rows_.count(id) != 0;
}

InvariantExtractor::InvariantExtractor(const ExtractorConfig& cfg, Rng& init)
    : cfg_(cfg) {
  if (cfg.in_dim <= 0 || cfg.hidden <= 0 || cfg.proj_hidden <= 0 ||
      cfg.out_dim <= 0 || cfg.blocks < 0) {
    throw ConfigError("extractor dimensions must be positive");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
    throw ConfigError("extractor dropout must be in [0,1)");
  }
  auto linear = [&](int in, int out) {
    return Linear{he_normal({in, out}, in, init),
                  fan_in_uniform({out}, in, init)};
  };
  auto bn = [&](int n) {
    return Bn{Tensor::full({n}, 1.0), Tensor::zeros({n}), Tensor::zeros({n}),
              Tensor::full({n}, 1.0)};
  };
  input_ = linear(cfg.in_dim, cfg.hidden);
  input_bn_ = bn(cfg.hidden);
  for (int i = 0; i < cfg.blocks; ++i) {
    blocks_.push_back(Block{linear(cfg.hidden, cfg.hidden),
                            linear(cfg.hidden, cfg.hidden), bn(cfg.hidden),
                            bn(cfg.hidden)});
  }
  fusion_ = linear(cfg.hidden, cfg.hidden);
  fusion_bn_ = bn(cfg.hidden);
  proj1_ = linear(cfg.hidden, cfg.proj_hidden);
  proj_bn_ = bn(cfg.proj_hidden);
  proj2_ = linear(cfg.proj_hidden, cfg.out_dim);
  out_bn_ = bn(cfg.out_dim);
}

std::vector<std::pair<std::string, Tensor*>> InvariantExtractor::parameters() {
  std::vector<std::pair<std::string, Tensor*>> v;
  auto lin = [&](const std::string& n, Linear& l) {
    v.emplace_back(n + ".W", &l.W);
    v.emplace_back(n + ".b", &l.b);
  };
  auto bn = [&](const std::string& n, Bn& b) {
    v.emplace_back(n + ".gamma", &b.gamma);
    v.emplace_back(n + ".beta", &b.beta);
  };
  lin("input", input_);
  bn("input_bn", input_bn_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    lin(p + ".l1", blocks_[i].l1);
    bn(p + ".bn1", blocks_[i].bn1);
    lin(p + ".l2", blocks_[i].l2);
    bn(p + ".bn2", blocks_[i].bn2);
  }
  lin("fusion", fusion_);
  bn("fusion_bn", fusion_bn_);
  lin("proj1", proj1_);
  bn("proj_bn", proj_bn_);
  lin("proj2", proj2_);
  bn("out_bn", out_bn_);
  return v;
}

std::vector<std::pair<std::string, Tensor*>> InvariantExtractor::buffers() {
  std::vector<std::pair<std::string, Tensor*>> v;
  auto bn = [&](const std::string& n, Bn& b) {
    v.emplace_back(n + ".mean", &b.mean);
    v.emplace_back(n + ".var", &b.var);
  };
  bn("input_bn", input_bn_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    bn(p + ".bn1", blocks_[i].bn1);
    bn(p + ".bn2", blocks_[i].bn2);
  }
  bn("fusion_bn", fusion_bn_);
  bn("proj_bn", proj_bn_);
  bn("out_bn", out_bn_);
  return v;
}

InvariantExtractor::Bound InvariantExtractor::bind(Tape& tape,
                                                   bool requires_grad) {
  Bound b;
  b.model_ = this;
  for (auto& [name, t] : parameters()) {
    b.leaves_.push_back(tape.leaf(*t, requires_grad));
  }
  return b;
}

InvariantExtractor::Bound InvariantExtractor::bind_leaves(
    std::vector<Tensor> leaves) {
  auto params = parameters();
  if (leaves.size() != params.size()) {
    throw ConfigError("bind_leaves expects " + std::to_string(params.size()) +
                      " tensors, got " + std::to_string(leaves.size()));
  }
  for (size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i].shape() != params[i].second->shape()) {
      throw ConfigError("bind_leaves shape mismatch for " + params[i].first);
    }
  }
  Bound b;
  b.model_ = this;
  b.leaves_ = std::move(leaves);
  return b;
}

Tensor InvariantExtractor::Bound::forward(const Tensor& x, bool training,
                                          Rng& rng) const {
  InvariantExtractor& m = *model_;
  const ExtractorConfig& cfg = m.cfg_;
  if (x.shape().size() != 2 || x.shape()[1] != cfg.in_dim) {
    throw DataError("extractor expects {N," + std::to_string(cfg.in_dim) +
                    "} input, got " + shape_str(x.shape()));
  }
  size_t i = 0;
  auto next = [&]() -> const Tensor& { return leaves_[i++]; };
  auto lin = [&](const Tensor& h) {
    const Tensor& W = next();
    const Tensor& b = next();
    return add_bias(matmul(h, W), b);
  };
  auto bn = [&](const Tensor& h, Bn& stats) {
    const Tensor& gamma = next();
    const Tensor& beta = next();
    return batch_norm(h, gamma, beta, stats.mean, stats.var, training);
  };
  auto drop = [&](const Tensor& h) {
    return dropout(h, cfg.dropout, rng, training);
  };

  Tensor h = drop(relu(bn(lin(x), m.input_bn_)));
  for (auto& blk : m.blocks_) {
    Tensor t = drop(relu(bn(lin(h), blk.bn1)));
    t = bn(lin(t), blk.bn2);
    h = relu(add(t, h));
  }
  h = drop(relu(bn(lin(h), m.fusion_bn_)));
  h = drop(relu(bn(lin(h), m.proj_bn_)));
  h = bn(lin(h), m.out_bn_);
  if (cfg.normalize_output) h = l2_normalize_rows(h);
  return h;
}

Tensor InvariantExtractor::infer(const Tensor& x) {
  // Plain-tensor binding: no tape is created, so the result can flow into
  // later graphs without referencing a tape that has gone out of scope.
  std::vector<Tensor> plain;
  for (auto& [name, t] : parameters()) plain.push_back(*t);
  Rng unused(0);
  return bind_leaves(std::move(plain)).forward(x, false, unused);
}

Tensor AnchorSet::row(int i) const {
  if (i < 0 || i >= count()) {
    throw DataError("anchor index " + std::to_string(i) + " out of range");
  }
  return slice_rows(E, i, 1);
}

std::pair<Tensor, Tensor> sample_pair_batch(const AnchorSet& anchors,
                                            const std::vector<int>& labels,
                                            Rng& rng) {
  int k = anchors.count();
  if (k < 2) {
    throw DataError(
        "cannot sample negatives: the anchor set has fewer than two classes");
  }
  int n = int(labels.size());
  int d = anchors.dim();
  Tensor pos({n, d}), neg({n, d});
  for (int r = 0; r < n; ++r) {
    int lab = labels[r];
    if (lab < 0 || lab >= k) {
      throw DataError("label " + std::to_string(lab) +
                      " outside anchor range [0," + std::to_string(k) + ")");
    }
    int other = rng.uniform_int(k - 1);
    if (other >= lab) ++other;
    for (int j = 0; j < d; ++j) {
      pos.vec()[r * d + j] = anchors.E.vec()[lab * d + j];
      neg.vec()[r * d + j] = anchors.E.vec()[other * d + j];
    }
  }
  return {pos, neg};
}

}  // namespace tiacam
