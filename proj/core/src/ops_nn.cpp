#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace tiacam {

using detail::merge_tapes;
using detail::require;
using detail::require_defined;

Tensor softmax_rows(const Tensor& x) {
  const char* op = "softmax_rows";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, x.at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += gout.at(i, j) * out.at(i, j);
        for (int j = 0; j < m; ++j) {
          gx.at(i, j) = out.at(i, j) * (gout.at(i, j) - dot);
        }
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  const char* op = "l2_normalize_rows";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  Tensor out(x.shape());
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += x.at(i, j) * x.at(i, j);
    double nr = std::sqrt(s);
    require(nr > 1e-12, op, "row " + std::to_string(i) + " has near-zero norm");
    norms[static_cast<size_t>(i)] = nr;
    for (int j = 0; j < m; ++j) out.at(i, j) = x.at(i, j) / nr;
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += gout.at(i, j) * out.at(i, j);
        double inv = 1.0 / norms[static_cast<size_t>(i)];
        for (int j = 0; j < m; ++j) {
          gx.at(i, j) = (gout.at(i, j) - out.at(i, j) * dot) * inv;
        }
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const char* op = "layer_norm";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == m && beta.rank() == 1 &&
              beta.dim(0) == m,
          op, "scale/shift shapes " + shape_str(gamma.shape()) + "/" +
                  shape_str(beta.shape()) + " do not match width " +
                  std::to_string(m));
  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < m; ++j) mu += x.at(i, j);
    mu /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) {
      double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= m;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < m; ++j) {
      double h = (x.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = gamma[j] * h + beta[j];
    }
  }
  Tape* tape = merge_tapes(op, x, gamma, beta);
  if (tape) {
    tape->record(op, {&x, &gamma, &beta}, out, [=](Tape& t, const Tensor& gout) {
      if (gamma.tracked()) {
        Tensor gg(gamma.shape());
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) gg[j] += gout.at(i, j) * xhat.at(i, j);
        }
        t.accumulate(gamma, gg);
      }
      if (beta.tracked()) {
        Tensor gb(beta.shape());
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) gb[j] += gout.at(i, j);
        }
        t.accumulate(beta, gb);
      }
      if (x.tracked()) {
        Tensor gx(x.shape());
        for (int i = 0; i < n; ++i) {
          double mean_g = 0.0, mean_gh = 0.0;
          for (int j = 0; j < m; ++j) {
            double gj = gout.at(i, j) * gamma[j];
            mean_g += gj;
            mean_gh += gj * xhat.at(i, j);
          }
          mean_g /= m;
          mean_gh /= m;
          double is = inv_std[static_cast<size_t>(i)];
          for (int j = 0; j < m; ++j) {
            double gj = gout.at(i, j) * gamma[j];
            gx.at(i, j) = (gj - mean_g - xhat.at(i, j) * mean_gh) * is;
          }
        }
        t.accumulate(x, gx);
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps) {
  const char* op = "batch_norm";
  require_defined(op, x);
  require(x.rank() == 2, op, "expected rank-2 input, got " + shape_str(x.shape()));
  int n = x.dim(0), m = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == m && beta.rank() == 1 &&
              beta.dim(0) == m,
          op, "scale/shift width does not match " + std::to_string(m));
  require(running_mean.defined() && running_mean.size() == m &&
              running_var.defined() && running_var.size() == m,
          op, "running buffers do not match width " + std::to_string(m));
  require(!running_mean.tracked() && !running_var.tracked(), op,
          "running buffers must not be tracked");
  require(!training || n >= 1, op, "empty batch");

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(m));
  std::vector<double> mu(static_cast<size_t>(m));
  if (training) {
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += x.at(i, j);
      mu[static_cast<size_t>(j)] = s / n;
    }
    for (int j = 0; j < m; ++j) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        double d = x.at(i, j) - mu[static_cast<size_t>(j)];
        v += d * d;
      }
      v /= n;  // biased, used consistently for the running buffer too
      inv_std[static_cast<size_t>(j)] = 1.0 / std::sqrt(v + eps);
      running_mean[j] =
          (1.0 - momentum) * running_mean[j] + momentum * mu[static_cast<size_t>(j)];
      running_var[j] = (1.0 - momentum) * running_var[j] + momentum * v;
    }
  } else {
    for (int j = 0; j < m; ++j) {
      mu[static_cast<size_t>(j)] = running_mean[j];
      inv_std[static_cast<size_t>(j)] = 1.0 / std::sqrt(running_var[j] + eps);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double h = (x.at(i, j) - mu[static_cast<size_t>(j)]) *
                 inv_std[static_cast<size_t>(j)];
      xhat.at(i, j) = h;
      out.at(i, j) = gamma[j] * h + beta[j];
    }
  }
  Tape* tape = merge_tapes(op, x, gamma, beta);
  if (tape) {
    tape->record(op, {&x, &gamma, &beta}, out, [=](Tape& t, const Tensor& gout) {
      if (gamma.tracked()) {
        Tensor gg(gamma.shape());
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) gg[j] += gout.at(i, j) * xhat.at(i, j);
        }
        t.accumulate(gamma, gg);
      }
      if (beta.tracked()) {
        Tensor gb(beta.shape());
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) gb[j] += gout.at(i, j);
        }
        t.accumulate(beta, gb);
      }
      if (x.tracked()) {
        Tensor gx(x.shape());
        if (training) {
          for (int j = 0; j < m; ++j) {
            double mean_g = 0.0, mean_gh = 0.0;
            for (int i = 0; i < n; ++i) {
              mean_g += gout.at(i, j);
              mean_gh += gout.at(i, j) * xhat.at(i, j);
            }
            mean_g /= n;
            mean_gh /= n;
            double scale = gamma[j] * inv_std[static_cast<size_t>(j)];
            for (int i = 0; i < n; ++i) {
              gx.at(i, j) = scale * (gout.at(i, j) - mean_g -
                                     xhat.at(i, j) * mean_gh);
            }
          }
        } else {
          for (int j = 0; j < m; ++j) {
            double scale = gamma[j] * inv_std[static_cast<size_t>(j)];
            for (int i = 0; i < n; ++i) gx.at(i, j) = scale * gout.at(i, j);
          }
        }
        t.accumulate(x, gx);
      }
    });
  }
  return out;
}

Tensor smooth_quantize(const Tensor& z, const Tensor& sharpness) {
  const char* op = "smooth_quantize";
  require_defined(op, z);
  require_defined(op, sharpness);
  require(sharpness.size() == 1, op, "sharpness must be a scalar tensor");
  require(sharpness[0] > 0.0, op,
          "sharpness must be positive, got " + std::to_string(sharpness[0]));
  Tensor fl = floor_const(z);
  Tensor frac = sub(z, fl);
  Tensor s = sigmoid(mul(frac, sharpness));
  return add(fl, add_scalar(s, -0.5));
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  const char* op = "cosine_rows";
  require_defined(op, a);
  require_defined(op, b);
  require(a.rank() == 2 && a.shape() == b.shape(), op,
          "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  int n = a.dim(0);
  for (int i = 0; i < n; ++i) {
    double na = 0.0, nb = 0.0;
    for (int j = 0; j < a.dim(1); ++j) {
      na += a.at(i, j) * a.at(i, j);
      nb += b.at(i, j) * b.at(i, j);
    }
    if (na <= 1e-24 || nb <= 1e-24) {
      throw EngineError("cosine_rows: undefined cosine for zero vector in row " +
                        std::to_string(i));
    }
  }
  Tensor dots = sum_cols(mul(a, b));
  Tensor na = sqrt(sum_cols(mul(a, a)));
  Tensor nb = sqrt(sum_cols(mul(b, b)));
  return div(dots, mul(na, nb));
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  const char* op = "dropout";
  require_defined(op, x);
  require(p >= 0.0 && p < 1.0, op, "rate must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Tensor mask(x.shape());
  double keep = 1.0 - p;
  for (int64_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
  }
  return mul(x, mask);
}

}  // namespace tiacam
