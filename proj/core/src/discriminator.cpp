#include "tiacam/discriminator.hpp"

#include <cmath>

#include "tiacam/error.hpp"

namespace tiacam {

PairDiscriminator::PairDiscriminator(const DiscriminatorConfig& cfg, Rng& init)
    : cfg_(cfg) {
  if (cfg.feature_dim <= 0 || cfg.hidden <= 0 || cfg.layers <= 0 ||
      cfg.heads <= 0 || cfg.ff_hidden <= 0) {
    throw ConfigError("discriminator dimensions must be positive");
  }
  if (cfg.hidden % cfg.heads != 0) {
    throw ConfigError("discriminator hidden width " +
                      std::to_string(cfg.hidden) +
                      " is not divisible by head count " +
                      std::to_string(cfg.heads));
  }
  auto push = [&](const std::string& name, Tensor t) {
    names_.push_back(name);
    store_.push_back(std::move(t));
  };
  auto w = [&](int in, int out) {
    Tensor t({in, out});
    double s = 1.0 / std::sqrt(double(in));
    for (double& v : t.vec()) v = init.normal() * s;
    return t;
  };
  auto token = [&]() {
    Tensor t({1, cfg.hidden});
    for (double& v : t.vec()) v = init.normal() * 0.02;
    return t;
  };
  push("cls", token());
  // Learned slot identities: without them the CLS readout of a shared
  // projection is exactly invariant under swapping the image and text slots.
  push("slot.img", token());
  push("slot.txt", token());
  push("input.W", w(cfg.feature_dim, cfg.hidden));
  push("input.b", Tensor::zeros({cfg.hidden}));
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "layer" + std::to_string(l);
    push(p + ".ln1.gamma", Tensor::full({cfg.hidden}, 1.0));
    push(p + ".ln1.beta", Tensor::zeros({cfg.hidden}));
    for (const char* m : {"Wq", "Wk", "Wv", "Wo"}) {
      push(p + ".attn." + m, w(cfg.hidden, cfg.hidden));
      push(p + ".attn.b" + std::string(1, m[1]),
           Tensor::zeros({cfg.hidden}));
    }
    push(p + ".ln2.gamma", Tensor::full({cfg.hidden}, 1.0));
    push(p + ".ln2.beta", Tensor::zeros({cfg.hidden}));
    push(p + ".ff.W1", w(cfg.hidden, cfg.ff_hidden));
    push(p + ".ff.b1", Tensor::zeros({cfg.ff_hidden}));
    push(p + ".ff.W2", w(cfg.ff_hidden, cfg.hidden));
    push(p + ".ff.b2", Tensor::zeros({cfg.hidden}));
  }
  push("final_ln.gamma", Tensor::full({cfg.hidden}, 1.0));
  push("final_ln.beta", Tensor::zeros({cfg.hidden}));
  // Zero head: an untrained discriminator must answer exactly 0.5.
  push("head.W", Tensor::zeros({cfg.hidden, 2}));
  push("head.b", Tensor::zeros({2}));
}

std::vector<std::pair<std::string, Tensor*>> PairDiscriminator::parameters() {
  std::vector<std::pair<std::string, Tensor*>> v;
  for (size_t i = 0; i < store_.size(); ++i) {
    v.emplace_back(names_[i], &store_[i]);
  }
  return v;
}

PairDiscriminator::Bound PairDiscriminator::bind(Tape& tape,
                                                 bool requires_grad) {
  Bound b;
  b.model_ = this;
  for (Tensor& t : store_) b.leaves_.push_back(tape.leaf(t, requires_grad));
  return b;
}

PairDiscriminator::Bound PairDiscriminator::bind_leaves(
    std::vector<Tensor> leaves) {
  if (leaves.size() != store_.size()) {
    throw ConfigError("bind_leaves expects " + std::to_string(store_.size()) +
                      " tensors, got " + std::to_string(leaves.size()));
  }
  for (size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i].shape() != store_[i].shape()) {
      throw ConfigError("bind_leaves shape mismatch for " + names_[i]);
    }
  }
  Bound b;
  b.model_ = this;
  b.leaves_ = std::move(leaves);
  return b;
}

Tensor PairDiscriminator::Bound::forward(const Tensor& z_img,
                                         const Tensor& z_txt,
                                         std::vector<Tensor>* attn_out) const {
  const DiscriminatorConfig& cfg = model_->cfg_;
  auto check = [&](const Tensor& z, const char* which) {
    if (z.shape().size() != 2 || z.shape()[1] != cfg.feature_dim) {
      throw DataError(std::string(which) + " features must be {N," +
                      std::to_string(cfg.feature_dim) + "}, got " +
                      shape_str(z.shape()));
    }
  };
  check(z_img, "image");
  check(z_txt, "text");
  if (z_img.shape()[0] != z_txt.shape()[0]) {
    throw DataError("image and text batches differ: " +
                    shape_str(z_img.shape()) + " vs " +
                    shape_str(z_txt.shape()));
  }

  size_t base = 0;
  auto at = [&](size_t i) -> const Tensor& { return leaves_[i]; };
  const Tensor& cls = at(0);
  const Tensor& slot_img = at(1);
  const Tensor& slot_txt = at(2);
  const Tensor& in_w = at(3);
  const Tensor& in_b = at(4);
  const size_t first_layer = 5;
  const size_t per_layer = 16;
  size_t final_base = first_layer + cfg.layers * per_layer;
  int dk = cfg.hidden / cfg.heads;
  double scale = 1.0 / std::sqrt(double(dk));

  int n = z_img.shape()[0];
  std::vector<Tensor> out_rows;
  for (int r = 0; r < n; ++r) {
    Tensor ti = add(add_bias(matmul(slice_rows(z_img, r, 1), in_w), in_b),
                    slot_img);
    Tensor tt = add(add_bias(matmul(slice_rows(z_txt, r, 1), in_w), in_b),
                    slot_txt);
    std::vector<Tensor> toks{cls, ti, tt};
    Tensor x = concat_rows(toks);

    for (int l = 0; l < cfg.layers; ++l) {
      base = first_layer + l * per_layer;
      Tensor h = layer_norm(x, at(base + 0), at(base + 1));
      Tensor q = add_bias(matmul(h, at(base + 2)), at(base + 3));
      Tensor k = add_bias(matmul(h, at(base + 4)), at(base + 5));
      Tensor v = add_bias(matmul(h, at(base + 6)), at(base + 7));
      std::vector<Tensor> ctx;
      for (int hd = 0; hd < cfg.heads; ++hd) {
        Tensor qh = slice_cols(q, hd * dk, dk);
        Tensor kh = slice_cols(k, hd * dk, dk);
        Tensor vh = slice_cols(v, hd * dk, dk);
        Tensor attn = softmax_rows(
            mul_scalar(matmul(qh, transpose(kh)), scale));
        if (attn_out) attn_out->push_back(attn);
        ctx.push_back(matmul(attn, vh));
      }
      Tensor merged = concat_cols(ctx);
      x = add(x, add_bias(matmul(merged, at(base + 8)), at(base + 9)));

      Tensor h2 = layer_norm(x, at(base + 10), at(base + 11));
      Tensor f = gelu(add_bias(matmul(h2, at(base + 12)), at(base + 13)));
      x = add(x, add_bias(matmul(f, at(base + 14)), at(base + 15)));
    }
    Tensor fin = layer_norm(x, at(final_base), at(final_base + 1));
    Tensor cls_row = slice_rows(fin, 0, 1);
    out_rows.push_back(
        add_bias(matmul(cls_row, at(final_base + 2)), at(final_base + 3)));
  }
  return concat_rows(out_rows);
}

Tensor PairDiscriminator::infer_logits(const Tensor& z_img,
                                       const Tensor& z_txt) {
  return bind_leaves(store_).forward(z_img, z_txt);
}

Tensor match_prob(const Tensor& logits) {
  return slice_cols(softmax_rows(logits), 0, 1);
}

}  // namespace tiacam
