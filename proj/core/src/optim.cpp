#include "tiacam/optim.hpp"

#include <cmath>

#include "ops_common.hpp"
#include "tiacam/error.hpp"

namespace tiacam {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  // lr 0 is legal: moments advance while parameters hold still, which the
  // trainer's step-counting contract relies on.
  if (!(lr >= 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 ||
      beta2 >= 1.0 || !(eps > 0.0)) {
    throw ConfigError("bad Adam hyperparameters");
  }
}

void Adam::step(const std::vector<std::pair<std::string, Tensor*>>& params,
                const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) {
    throw EngineError("Adam::step got " + std::to_string(grads.size()) +
                      " gradients for " + std::to_string(params.size()) +
                      " parameters");
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i].second;
    const Tensor& g = grads[i];
    if (g.shape() != p->shape()) {
      throw EngineError("Adam gradient shape " + shape_str(g.shape()) +
                        " does not match parameter " + params[i].first + " " +
                        shape_str(p->shape()));
    }
    Slot& s = slots_[params[i].first];
    if (s.m.empty()) {
      s.m.assign(p->size(), 0.0);
      s.v.assign(p->size(), 0.0);
    }
    if (int64_t(s.m.size()) != p->size()) {
      throw EngineError("Adam moment size mismatch for " + params[i].first);
    }
    for (int64_t j = 0; j < p->size(); ++j) {
      double gj = g.vec()[j];
      s.m[j] = beta1_ * s.m[j] + (1.0 - beta1_) * gj;
      s.v[j] = beta2_ * s.v[j] + (1.0 - beta2_) * gj * gj;
      double mhat = s.m[j] / bc1;
      double vhat = s.v[j] / bc2;
      p->vec()[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    detail::maybe_round_f32(s.m);
    detail::maybe_round_f32(s.v);
    detail::maybe_round_f32(p->vec());
  }
}

void sgd_step(const std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) {
    throw EngineError("sgd_step gradient count mismatch");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i].second;
    if (grads[i].shape() != p->shape()) {
      throw EngineError("sgd gradient shape mismatch for " + params[i].first);
    }
    for (int64_t j = 0; j < p->size(); ++j) {
      p->vec()[j] -= lr * grads[i].vec()[j];
    }
    detail::maybe_round_f32(p->vec());
  }
}

}  // namespace tiacam
