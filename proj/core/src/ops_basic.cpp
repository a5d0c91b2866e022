#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace tiacam {

using detail::Bcast;
using detail::bcast_index;
using detail::merge_tapes;
using detail::require;
using detail::require_defined;

namespace {

// Elementwise binary op with right-operand broadcasting. dfa/dfb are the
// partials w.r.t. a and b as functions of (a_val, b_val, out_val).
template <class Fwd, class DfA, class DfB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd f,
                 DfA dfa, DfB dfb) {
  require_defined(op, a);
  require_defined(op, b);
  Bcast k = detail::resolve_bcast(op, a.shape(), b.shape());
  Tensor out(a.shape());
  const double* ap = a.data();
  const double* bp = b.data();
  double* op_ = out.data();
  const Shape& xs = a.shape();
  for (int64_t i = 0; i < out.size(); ++i) {
    op_[i] = f(ap[i], bp[bcast_index(k, i, xs)]);
  }
  Tape* tape = merge_tapes(op, a, b);
  if (tape) {
    tape->record(op, {&a, &b}, out,
                 [=](Tape& t, const Tensor& gout) {
                   const double* g = gout.data();
                   const double* av = a.data();
                   const double* bv = b.data();
                   const double* ov = out.data();
                   if (a.tracked()) {
                     Tensor ga(a.shape());
                     double* gp = ga.data();
                     for (int64_t i = 0; i < ga.size(); ++i) {
                       int64_t j = bcast_index(k, i, a.shape());
                       gp[i] = g[i] * dfa(av[i], bv[j], ov[i]);
                     }
                     t.accumulate(a, ga);
                   }
                   if (b.tracked()) {
                     Tensor gb(b.shape());
                     double* gp = gb.data();
                     for (int64_t i = 0; i < gout.size(); ++i) {
                       int64_t j = bcast_index(k, i, a.shape());
                       gp[j] += g[i] * dfb(av[i], bv[j], ov[i]);
                     }
                     t.accumulate(b, gb);
                   }
                 });
  }
  return out;
}

template <class Fwd, class Df>
Tensor unary_op(const char* op, const Tensor& x, Fwd f, Df df) {
  require_defined(op, x);
  Tensor out(x.shape());
  const double* xp = x.data();
  double* op_ = out.data();
  for (int64_t i = 0; i < out.size(); ++i) op_[i] = f(xp[i]);
  if (x.tracked()) {
    Tape* tape = x.tape();
    tape->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      const double* g = gout.data();
      const double* xv = x.data();
      const double* ov = out.data();
      double* gp = gx.data();
      for (int64_t i = 0; i < gx.size(); ++i) gp[i] = g[i] * df(xv[i], ov[i]);
      t.accumulate(x, gx);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      "add_scalar", x, [=](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(
      "mul_scalar", x, [=](double v) { return v * c; },
      [=](double, double) { return c; });
}

Tensor neg(const Tensor& x) {
  return unary_op(
      "neg", x, [](double v) { return -v; },
      [](double, double) { return -1.0; });
}

Tensor one_minus(const Tensor& x) {
  return unary_op(
      "one_minus", x, [](double v) { return 1.0 - v; },
      [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double o) { return o; });
}

Tensor log(const Tensor& x) {
  require_defined("log", x);
  for (int64_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0.0, "log", "non-positive input " + std::to_string(x[i]));
  }
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
  return unary_op(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor sqrt(const Tensor& x) {
  require_defined("sqrt", x);
  for (int64_t i = 0; i < x.size(); ++i) {
    require(x[i] >= 0.0, "sqrt", "negative input " + std::to_string(x[i]));
  }
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double v, double o) { return v > 0.0 ? 0.5 / o : 0.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op(
      "gelu", x,
      [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return detail::sigmoid_stable(v); },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      "softplus", x, [](double v) { return detail::softplus_stable(v); },
      [](double v, double) { return detail::sigmoid_stable(v); });
}

Tensor pow_channels(const Tensor& x, const Tensor& g) {
  const char* op = "pow_channels";
  require_defined(op, x);
  require_defined(op, g);
  Bcast k = detail::resolve_bcast(op, x.shape(), g.shape());
  require(k == Bcast::scalar || k == Bcast::lastdim || k == Bcast::same, op,
          "exponent must broadcast as scalar or per-channel");
  for (int64_t i = 0; i < x.size(); ++i) {
    require(x[i] >= 0.0, op, "negative base " + std::to_string(x[i]));
  }
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = std::pow(x[i], g[bcast_index(k, i, x.shape())]);
  }
  Tape* tape = merge_tapes(op, x, g);
  if (tape) {
    tape->record(op, {&x, &g}, out, [=](Tape& t, const Tensor& gout) {
      if (x.tracked()) {
        Tensor gx(x.shape());
        for (int64_t i = 0; i < gx.size(); ++i) {
          double e = g[bcast_index(k, i, x.shape())];
          // Subgradient 0 at the x == 0 boundary to keep values finite.
          gx[i] = x[i] > 0.0 ? gout[i] * e * std::pow(x[i], e - 1.0) : 0.0;
        }
        t.accumulate(x, gx);
      }
      if (g.tracked()) {
        Tensor gg(g.shape());
        for (int64_t i = 0; i < gout.size(); ++i) {
          if (x[i] > 0.0) {
            int64_t j = bcast_index(k, i, x.shape());
            gg[j] += gout[i] * out[i] * std::log(x[i]);
          }
        }
        t.accumulate(g, gg);
      }
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp", "empty interval");
  return unary_op(
      "clamp", x, [=](double v) { return std::min(std::max(v, lo), hi); },
      [=](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor floor_const(const Tensor& x) {
  return unary_op(
      "floor_const", x, [](double v) { return std::floor(v); },
      [](double, double) { return 0.0; });
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x);
  double s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor out({1}, {s});
  if (x.tracked()) {
    x.tape()->record("sum", {&x}, out, [=](Tape& t, const Tensor& gout) {
      t.accumulate(x, Tensor::full(x.shape(), gout[0]));
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  require_defined("mean", x);
  require(x.size() > 0, "mean", "empty tensor");
  double s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x[i];
  double inv = 1.0 / static_cast<double>(x.size());
  Tensor out({1}, {s * inv});
  if (x.tracked()) {
    x.tape()->record("mean", {&x}, out, [=](Tape& t, const Tensor& gout) {
      t.accumulate(x, Tensor::full(x.shape(), gout[0] * inv));
    });
  }
  return out;
}

Tensor sum_cols(const Tensor& x) {
  const char* op = "sum_cols";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += x.at(i, j);
    out[i] = s;
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gx.at(i, j) = gout[i];
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  const char* op = "add_bias";
  require_defined(op, x);
  require_defined(op, b);
  require(x.rank() == 2 && b.rank() == 1 && x.dim(1) == b.dim(0), op,
          "shapes " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
  int n = x.dim(0), m = x.dim(1);
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(i, j) = x.at(i, j) + b[j];
  }
  Tape* tape = merge_tapes(op, x, b);
  if (tape) {
    tape->record(op, {&x, &b}, out, [=](Tape& t, const Tensor& gout) {
      if (x.tracked()) t.accumulate(x, gout.clone());
      if (b.tracked()) {
        Tensor gb(b.shape());
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) gb[j] += gout.at(i, j);
        }
        t.accumulate(b, gb);
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const char* op = "matmul";
  require_defined(op, a);
  require_defined(op, b);
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), op,
          "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < k; ++l) {
      double av = a.at(i, l);
      if (av == 0.0) continue;
      for (int j = 0; j < m; ++j) out.at(i, j) += av * b.at(l, j);
    }
  }
  Tape* tape = merge_tapes(op, a, b);
  if (tape) {
    tape->record(op, {&a, &b}, out, [=](Tape& t, const Tensor& gout) {
      if (a.tracked()) {
        Tensor ga(a.shape());
        for (int i = 0; i < n; ++i) {
          for (int l = 0; l < k; ++l) {
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += gout.at(i, j) * b.at(l, j);
            ga.at(i, l) = s;
          }
        }
        t.accumulate(a, ga);
      }
      if (b.tracked()) {
        Tensor gb(b.shape());
        for (int l = 0; l < k; ++l) {
          for (int i = 0; i < n; ++i) {
            double av = a.at(i, l);
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j) gb.at(l, j) += av * gout.at(i, j);
          }
        }
        t.accumulate(b, gb);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  const char* op = "transpose";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(j, i) = x.at(i, j);
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gx.at(i, j) = gout.at(j, i);
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  const char* op = "reshape";
  require_defined(op, x);
  require(shape_size(shape) == x.size(), op,
          "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out(shape, x.vec());
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      t.accumulate(x, Tensor(x.shape(), gout.vec()));
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  const char* op = "slice_cols";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input");
  require(start >= 0 && len > 0 && start + len <= x.dim(1), op,
          "range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for " + shape_str(x.shape()));
  int n = x.dim(0);
  Tensor out({n, len});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < len; ++j) gx.at(i, start + j) = gout.at(i, j);
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  const char* op = "slice_rows";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input");
  require(start >= 0 && len > 0 && start + len <= x.dim(0), op,
          "range out of bounds for " + shape_str(x.shape()));
  int m = x.dim(1);
  Tensor out({len, m});
  for (int i = 0; i < len; ++i) {
    for (int j = 0; j < m; ++j) out.at(i, j) = x.at(start + i, j);
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < len; ++i) {
        for (int j = 0; j < m; ++j) gx.at(start + i, j) = gout.at(i, j);
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

namespace {

Tensor concat2d(const char* op, std::span<const Tensor> xs, bool along_cols) {
  require(!xs.empty(), op, "empty input list");
  for (const Tensor& t : xs) {
    require_defined(op, t);
    require(t.rank() == 2, op, "expected rank-2 inputs");
  }
  int fixed = along_cols ? xs[0].dim(0) : xs[0].dim(1);
  int total = 0;
  for (const Tensor& t : xs) {
    int f = along_cols ? t.dim(0) : t.dim(1);
    require(f == fixed, op, "mismatched shapes " + shape_str(xs[0].shape()) +
                                " and " + shape_str(t.shape()));
    total += along_cols ? t.dim(1) : t.dim(0);
  }
  Tensor out(along_cols ? Shape{fixed, total} : Shape{total, fixed});
  int off = 0;
  for (const Tensor& t : xs) {
    if (along_cols) {
      for (int i = 0; i < fixed; ++i) {
        for (int j = 0; j < t.dim(1); ++j) out.at(i, off + j) = t.at(i, j);
      }
      off += t.dim(1);
    } else {
      for (int i = 0; i < t.dim(0); ++i) {
        for (int j = 0; j < fixed; ++j) out.at(off + i, j) = t.at(i, j);
      }
      off += t.dim(0);
    }
  }
  Tape* tape = nullptr;
  for (const Tensor& t : xs) {
    if (t.tracked()) {
      require(!tape || tape == t.tape(), op, "inputs recorded on different tapes");
      tape = t.tape();
    }
  }
  if (tape) {
    std::vector<Tensor> parts(xs.begin(), xs.end());
    // record() reads the pointer list immediately; parts is captured below.
    std::vector<const Tensor*> stable;
    for (size_t i = 0; i < parts.size(); ++i) stable.push_back(&parts[i]);
    tape->record(op, std::span<const Tensor* const>(stable.data(), stable.size()),
                 out, [parts, along_cols, fixed](Tape& t, const Tensor& gout) {
                   int off2 = 0;
                   for (const Tensor& p : parts) {
                     Tensor gp(p.shape());
                     if (along_cols) {
                       for (int i = 0; i < fixed; ++i) {
                         for (int j = 0; j < p.dim(1); ++j) {
                           gp.at(i, j) = gout.at(i, off2 + j);
                         }
                       }
                       off2 += p.dim(1);
                     } else {
                       for (int i = 0; i < p.dim(0); ++i) {
                         for (int j = 0; j < fixed; ++j) {
                           gp.at(i, j) = gout.at(off2 + i, j);
                         }
                       }
                       off2 += p.dim(0);
                     }
                     t.accumulate(p, gp);
                   }
                 });
  }
  return out;
}

}  // namespace

Tensor concat_cols(std::span<const Tensor> xs) {
  return concat2d("concat_cols", xs, true);
}

Tensor concat_rows(std::span<const Tensor> xs) {
  return concat2d("concat_rows", xs, false);
}

}  // namespace tiacam
