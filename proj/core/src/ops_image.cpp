#include <algorithm>
#include <array>
#include <cmath>

#include "ops_common.hpp"

namespace tiacam {

using detail::merge_tapes;
using detail::require;
using detail::require_defined;

Tensor conv2d(const Tensor& x, const Tensor& k) {
  const char* op = "conv2d";
  require_defined(op, x);
  require_defined(op, k);
  require(x.rank() == 3, op, "expected {H,W,C} input, got " + shape_str(x.shape()));
  require(k.rank() == 2 && k.dim(0) == k.dim(1), op,
          "expected square kernel, got " + shape_str(k.shape()));
  require(k.dim(0) % 2 == 1, op,
          "kernel size must be odd, got " + std::to_string(k.dim(0)));
  int h = x.dim(0), w = x.dim(1), c = x.dim(2), ks = k.dim(0), r = ks / 2;
  Tensor out(x.shape());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int a = 0; a < ks; ++a) {
        int si = i - a + r;
        if (si < 0 || si >= h) continue;
        for (int b = 0; b < ks; ++b) {
          int sj = j - b + r;
          if (sj < 0 || sj >= w) continue;
          double kv = k.at(a, b);
          for (int ch = 0; ch < c; ++ch) {
            out.at(i, j, ch) += kv * x.at(si, sj, ch);
          }
        }
      }
    }
  }
  Tape* tape = merge_tapes(op, x, k);
  if (tape) {
    tape->record(op, {&x, &k}, out, [=](Tape& t, const Tensor& gout) {
      if (x.tracked()) {
        Tensor gx(x.shape());
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            for (int a = 0; a < ks; ++a) {
              int oi = i + a - r;
              if (oi < 0 || oi >= h) continue;
              for (int b = 0; b < ks; ++b) {
                int oj = j + b - r;
                if (oj < 0 || oj >= w) continue;
                double kv = k.at(a, b);
                for (int ch = 0; ch < c; ++ch) {
                  gx.at(i, j, ch) += kv * gout.at(oi, oj, ch);
                }
              }
            }
          }
        }
        t.accumulate(x, gx);
      }
      if (k.tracked()) {
        Tensor gk(k.shape());
        for (int a = 0; a < ks; ++a) {
          for (int b = 0; b < ks; ++b) {
            double s = 0.0;
            for (int i = 0; i < h; ++i) {
              int si = i - a + r;
              if (si < 0 || si >= h) continue;
              for (int j = 0; j < w; ++j) {
                int sj = j - b + r;
                if (sj < 0 || sj >= w) continue;
                for (int ch = 0; ch < c; ++ch) {
                  s += gout.at(i, j, ch) * x.at(si, sj, ch);
                }
              }
            }
            gk.at(a, b) = s;
          }
        }
        t.accumulate(k, gk);
      }
    });
  }
  return out;
}

Tensor avg_pool(const Tensor& x, int win, int stride) {
  const char* op = "avg_pool";
  require_defined(op, x);
  require(x.rank() == 3, op, "expected {H,W,C} input, got " + shape_str(x.shape()));
  require(win > 0 && stride > 0, op, "window and stride must be positive");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(h >= win && w >= win, op,
          "window " + std::to_string(win) + " exceeds input " + shape_str(x.shape()));
  int ho = (h - win) / stride + 1;
  int wo = (w - win) / stride + 1;
  double inv = 1.0 / (static_cast<double>(win) * win);
  Tensor out({ho, wo, c});
  for (int i = 0; i < ho; ++i) {
    for (int j = 0; j < wo; ++j) {
      for (int a = 0; a < win; ++a) {
        for (int b = 0; b < win; ++b) {
          for (int ch = 0; ch < c; ++ch) {
            out.at(i, j, ch) += x.at(i * stride + a, j * stride + b, ch) * inv;
          }
        }
      }
    }
  }
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx(x.shape());
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          for (int a = 0; a < win; ++a) {
            for (int b = 0; b < win; ++b) {
              for (int ch = 0; ch < c; ++ch) {
                gx.at(i * stride + a, j * stride + b, ch) +=
                    gout.at(i, j, ch) * inv;
              }
            }
          }
        }
      }
      t.accumulate(x, gx);
    });
  }
  return out;
}

Tensor bilinear_grid_sample(const Tensor& x, const Tensor& grid) {
  const char* op = "bilinear_grid_sample";
  require_defined(op, x);
  require_defined(op, grid);
  require(x.rank() == 3, op, "expected {H,W,C} image, got " + shape_str(x.shape()));
  require(grid.rank() == 3 && grid.dim(2) == 2, op,
          "expected {Ho,Wo,2} grid, got " + shape_str(grid.shape()));
  for (int64_t i = 0; i < grid.size(); ++i) {
    require(std::isfinite(grid[i]) && std::abs(grid[i]) < 1e9, op,
            "non-finite or absurd grid coordinate");
  }
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int ho = grid.dim(0), wo = grid.dim(1);
  Tensor out({ho, wo, c});

  auto pix = [&](int i, int j, int ch) -> double {
    if (i < 0 || i >= h || j < 0 || j >= w) return 0.0;
    return x.at(i, j, ch);
  };

  for (int i = 0; i < ho; ++i) {
    for (int j = 0; j < wo; ++j) {
      double r = grid.at(i, j, 0);
      double cl = grid.at(i, j, 1);
      int r0 = static_cast<int>(std::floor(r));
      int c0 = static_cast<int>(std::floor(cl));
      double fr = r - r0, fc = cl - c0;
      for (int ch = 0; ch < c; ++ch) {
        double p00 = pix(r0, c0, ch), p01 = pix(r0, c0 + 1, ch);
        double p10 = pix(r0 + 1, c0, ch), p11 = pix(r0 + 1, c0 + 1, ch);
        out.at(i, j, ch) = (1 - fr) * ((1 - fc) * p00 + fc * p01) +
                           fr * ((1 - fc) * p10 + fc * p11);
      }
    }
  }
  Tape* tape = merge_tapes(op, x, grid);
  if (tape) {
    tape->record(op, {&x, &grid}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gx = x.tracked() ? Tensor(x.shape()) : Tensor();
      Tensor gg = grid.tracked() ? Tensor(grid.shape()) : Tensor();
      auto pix2 = [&](int i, int j, int ch) -> double {
        if (i < 0 || i >= h || j < 0 || j >= w) return 0.0;
        return x.at(i, j, ch);
      };
      auto scatter = [&](int i, int j, int ch, double v) {
        if (i < 0 || i >= h || j < 0 || j >= w) return;
        gx.at(i, j, ch) += v;
      };
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          double r = grid.at(i, j, 0);
          double cl = grid.at(i, j, 1);
          int r0 = static_cast<int>(std::floor(r));
          int c0 = static_cast<int>(std::floor(cl));
          double fr = r - r0, fc = cl - c0;
          double dr = 0.0, dc = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            double g = gout.at(i, j, ch);
            if (gx.defined()) {
              scatter(r0, c0, ch, g * (1 - fr) * (1 - fc));
              scatter(r0, c0 + 1, ch, g * (1 - fr) * fc);
              scatter(r0 + 1, c0, ch, g * fr * (1 - fc));
              scatter(r0 + 1, c0 + 1, ch, g * fr * fc);
            }
            if (gg.defined()) {
              double p00 = pix2(r0, c0, ch), p01 = pix2(r0, c0 + 1, ch);
              double p10 = pix2(r0 + 1, c0, ch), p11 = pix2(r0 + 1, c0 + 1, ch);
              dr += g * ((1 - fc) * (p10 - p00) + fc * (p11 - p01));
              dc += g * ((1 - fr) * (p01 - p00) + fr * (p11 - p10));
            }
          }
          if (gg.defined()) {
            gg.at(i, j, 0) = dr;
            gg.at(i, j, 1) = dc;
          }
        }
      }
      if (gx.defined()) t.accumulate(x, gx);
      if (gg.defined()) t.accumulate(grid, gg);
    });
  }
  return out;
}

Tensor homography_grid(const Tensor& A, int h, int w) {
  const char* op = "homography_grid";
  require_defined(op, A);
  require(A.rank() == 2 && A.dim(0) == 3 && A.dim(1) == 3, op,
          "expected {3,3} matrix, got " + shape_str(A.shape()));
  require(h > 0 && w > 0, op, "output extent must be positive");
  double det = A.at(0, 0) * (A.at(1, 1) * A.at(2, 2) - A.at(1, 2) * A.at(2, 1)) -
               A.at(0, 1) * (A.at(1, 0) * A.at(2, 2) - A.at(1, 2) * A.at(2, 0)) +
               A.at(0, 2) * (A.at(1, 0) * A.at(2, 1) - A.at(1, 1) * A.at(2, 0));
  require(std::abs(det) > 1e-8, op,
          "degenerate homography, |det| = " + std::to_string(std::abs(det)));
  Tensor out({h, w, 2});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double den = A.at(2, 0) * x + A.at(2, 1) * y + A.at(2, 2);
      double sx = (A.at(0, 0) * x + A.at(0, 1) * y + A.at(0, 2)) / den;
      double sy = (A.at(1, 0) * x + A.at(1, 1) * y + A.at(1, 2)) / den;
      out.at(y, x, 0) = sy;
      out.at(y, x, 1) = sx;
    }
  }
  if (A.tracked()) {
    A.tape()->record(op, {&A}, out, [=](Tape& t, const Tensor& gout) {
      Tensor gA(A.shape());
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double den = A.at(2, 0) * x + A.at(2, 1) * y + A.at(2, 2);
          double sy = out.at(y, x, 0);
          double sx = out.at(y, x, 1);
          double gy = gout.at(y, x, 0);
          double gx = gout.at(y, x, 1);
          double v[3] = {static_cast<double>(x), static_cast<double>(y), 1.0};
          for (int j = 0; j < 3; ++j) {
            gA.at(0, j) += gx * v[j] / den;
            gA.at(1, j) += gy * v[j] / den;
            gA.at(2, j) += -(gx * sx + gy * sy) * v[j] / den;
          }
        }
      }
      t.accumulate(A, gA);
    });
  }
  return out;
}

namespace {

struct DctBasis {
  std::array<std::array<double, kDctBlock>, kDctBlock> t;
  DctBasis() {
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < kDctBlock; ++i) {
      double scale = (i == 0) ? std::sqrt(1.0 / kDctBlock) : std::sqrt(2.0 / kDctBlock);
      for (int j = 0; j < kDctBlock; ++j) {
        t[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            scale * std::cos(pi * (2 * j + 1) * i / (2.0 * kDctBlock));
      }
    }
  }
};

const DctBasis& dct_basis() {
  static const DctBasis b;
  return b;
}

// Applies T B T^t (inv=false) or T^t B T (inv=true) to each 8x8 block B of
// each channel. T is the orthonormal type-II DCT basis.
Tensor dct_apply(const Tensor& src, bool inv) {
  const auto& T = dct_basis().t;
  int h = src.dim(0), w = src.dim(1), c = src.dim(2);
  Tensor dst(src.shape());
  std::array<std::array<double, kDctBlock>, kDctBlock> tmp;
  auto tv = [&](int i, int j) {
    return T[static_cast<size_t>(i)][static_cast<size_t>(j)];
  };
  for (int ch = 0; ch < c; ++ch) {
    for (int bi = 0; bi < h; bi += kDctBlock) {
      for (int bj = 0; bj < w; bj += kDctBlock) {
        // tmp = L * B with L = T (forward) or T^t (inverse)
        for (int i = 0; i < kDctBlock; ++i) {
          for (int j = 0; j < kDctBlock; ++j) {
            double s = 0.0;
            for (int k = 0; k < kDctBlock; ++k) {
              double l = inv ? tv(k, i) : tv(i, k);
              s += l * src.at(bi + k, bj + j, ch);
            }
            tmp[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
          }
        }
        // dst = tmp * R with R = T^t (forward) or T (inverse)
        for (int i = 0; i < kDctBlock; ++i) {
          for (int j = 0; j < kDctBlock; ++j) {
            double s = 0.0;
            for (int k = 0; k < kDctBlock; ++k) {
              double r = inv ? tv(k, j) : tv(j, k);
              s += tmp[static_cast<size_t>(i)][static_cast<size_t>(k)] * r;
            }
            dst.at(bi + i, bj + j, ch) = s;
          }
        }
      }
    }
  }
  return dst;
}

Tensor block_dct(const char* op, const Tensor& x, bool inverse) {
  detail::require_defined(op, x);
  detail::require(x.rank() == 3, op,
                  "expected {H,W,C} input, got " + shape_str(x.shape()));
  int h = x.dim(0), w = x.dim(1);
  detail::require(h % kDctBlock == 0 && w % kDctBlock == 0, op,
                  "extents " + shape_str(x.shape()) + " are not multiples of " +
                      std::to_string(kDctBlock));
  Tensor out = dct_apply(x, inverse);
  if (x.tracked()) {
    x.tape()->record(op, {&x}, out, [=](Tape& t, const Tensor& gout) {
      // Adjoint of an orthonormal block transform is the inverse transform.
      t.accumulate(x, dct_apply(gout, !inverse));
    });
  }
  return out;
}

}  // namespace

Tensor dct2d(const Tensor& x) { return block_dct("dct2d", x, false); }

Tensor idct2d(const Tensor& x) { return block_dct("idct2d", x, true); }

}  // namespace tiacam
