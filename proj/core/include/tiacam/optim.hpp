#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tiacam/tensor.hpp"

namespace tiacam {

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they survive checkpointing; updates are applied in place.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t steps() const { return t_; }

  /// One update over named parameters with matching gradient list.
  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<Tensor>& grads);

  struct Slot {
    std::vector<double> m, v;
  };
  /// Serialization access: moments by name plus the step counter.
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

/// Plain gradient descent step, used by watermark registration.
void sgd_step(const std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads, double lr);

}  // namespace tiacam
