#include <cmath>

#include "ops_common.hpp"

namespace tiacam {

namespace {

double eval_once(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                 const std::vector<Tensor>& point) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const Tensor& p : point) leaves.push_back(tape.leaf(p.clone(), false));
  Tensor loss = f(tape, leaves);
  if (loss.size() != 1) {
    throw EngineError("finite_diff_check: f must return a scalar, got shape " +
                      shape_str(loss.shape()));
  }
  return loss.item();
}

}  // namespace

FdReport finite_diff_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& point, double eps, double tol,
    int coord_stride) {
  if (point.empty()) throw EngineError("finite_diff_check: empty point");
  if (eps <= 0.0) throw EngineError("finite_diff_check: eps must be positive");
  if (coord_stride < 1) coord_stride = 1;

  // Analytic gradients.
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const Tensor& p : point) leaves.push_back(tape.leaf(p.clone(), true));
  Tensor loss = f(tape, leaves);
  if (loss.size() != 1) {
    throw EngineError("finite_diff_check: f must return a scalar, got shape " +
                      shape_str(loss.shape()));
  }
  double base = loss.item();
  // Two probes at the base point must agree bitwise.
  double probe = eval_once(f, point);
  if (probe != base) {
    throw EngineError("finite_diff_check: f is non-deterministic (" +
                      std::to_string(base) + " vs " + std::to_string(probe) + ")");
  }
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (const Tensor& l : leaves) grads.push_back(tape.grad(l));

  FdReport report;
  report.max_rel_err = 0.0;
  for (size_t pi = 0; pi < point.size(); ++pi) {
    for (int64_t j = 0; j < point[pi].size(); j += coord_stride) {
      std::vector<Tensor> plus, minus;
      plus.reserve(point.size());
      minus.reserve(point.size());
      for (size_t q = 0; q < point.size(); ++q) {
        plus.push_back(point[q].clone());
        minus.push_back(point[q].clone());
      }
      plus[pi][j] += eps;
      minus[pi][j] -= eps;
      double fd = (eval_once(f, plus) - eval_once(f, minus)) / (2.0 * eps);
      double an = grads[pi][j];
      // Relative error with an absolute floor so near-zero gradients are
      // compared at an absolute tolerance of tol * 1e-3.
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
      if (rel > report.max_rel_err) report.max_rel_err = rel;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace tiacam
