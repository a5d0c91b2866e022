#pragma once

#include <cmath>
#include <string>

#include "tiacam/tensor.hpp"

namespace tiacam {
namespace detail {

inline void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw EngineError(std::string(op) + ": " + msg);
}

inline void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw EngineError(std::string(op) + ": undefined input tensor");
}

/// Tape shared by the tracked inputs, or nullptr when all are constants.
template <class... Ts>
Tape* merge_tapes(const char* op, const Ts&... ts) {
  Tape* tape = nullptr;
  auto visit = [&](const Tensor& t) {
    if (!t.tracked()) return;
    if (tape && tape != t.tape()) {
      throw EngineError(std::string(op) + ": inputs recorded on different tapes");
    }
    tape = t.tape();
  };
  (visit(ts), ...);
  return tape;
}

enum class Bcast { same, scalar, lastdim, spatial };

/// Broadcasting rule for the right operand of a binary op.
inline Bcast resolve_bcast(const char* op, const Shape& x, const Shape& b) {
  if (x == b) return Bcast::same;
  if (b.size() == 1 && b[0] == 1) return Bcast::scalar;
  if (b.size() == 1 && !x.empty() && x.back() == b[0]) return Bcast::lastdim;
  if (b.size() == 2 && x.size() == 3 && x[0] == b[0] && x[1] == b[1]) {
    return Bcast::spatial;
  }
  throw EngineError(std::string(op) + ": shapes " + shape_str(x) + " and " +
                    shape_str(b) + " are not compatible");
}

inline int64_t bcast_index(Bcast k, int64_t i, const Shape& xs) {
  switch (k) {
    case Bcast::same:
      return i;
    case Bcast::scalar:
      return 0;
    case Bcast::lastdim:
      return i % xs.back();
    case Bcast::spatial:
      return i / xs.back();
  }
  return 0;
}

inline double sigmoid_stable(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void maybe_round_f32(std::vector<double>& v);
bool all_finite(const std::vector<double>& v);

}  // namespace detail
}  // namespace tiacam
