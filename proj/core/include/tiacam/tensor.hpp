#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tiacam/error.hpp"
#include "tiacam/rng.hpp"

namespace tiacam {

using Shape = std::vector<int>;

enum class Precision { f64, f32 };

/// Process-wide compute precision. f32 rounds every recorded forward value,
/// gradient accumulation and optimizer update through IEEE binary32. Set once
/// at startup; tests run in f64.
void set_precision(Precision p);
Precision precision();

std::string shape_str(const Shape& s);
int64_t shape_size(const Shape& s);

class Tape;

/// Dense row-major real tensor. Copies share the underlying buffer; use
/// clone() for an independent copy. A tensor optionally carries a (tape,
/// node) link when it participates in a recorded computation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  std::vector<double>& vec() { return *data_; }
  const std::vector<double>& vec() const { return *data_; }

  double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return (*data_)[static_cast<size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return (*data_)[static_cast<size_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k) {
    return (*data_)[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k) const {
    return (*data_)[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  /// Scalar value of a single-element tensor.
  double item() const;

  Tensor clone() const;
  bool same_buffer(const Tensor& o) const { return data_ == o.data_; }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  std::shared_ptr<std::vector<double>> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  friend class Tape;
};

/// Reverse-mode tape. Ops record a backward closure per entry; backward()
/// walks entries in reverse and accumulates gradients by summation (fan-out
/// adds, no clipping or rescaling inside the engine). A stop-gradient entry
/// is an exact barrier: values pass through, nothing propagates back.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Wrap a value as a tracked input node. The returned handle aliases the
  /// value's buffer.
  Tensor leaf(const Tensor& value, bool requires_grad = true);

  /// Pass x through a barrier entry that blocks backward flow exactly.
  Tensor barrier(const Tensor& x);

  /// Backpropagate from a scalar loss recorded on this tape. Callable once.
  void backward(const Tensor& loss);

  /// Gradient of the loss w.r.t. a tracked tensor; zeros if nothing flowed.
  Tensor grad(const Tensor& t) const;

  bool backward_done() const { return backward_done_; }
  size_t num_entries() const { return entries_.size(); }

  /// Text dump of all entries for debugging.
  void dump(std::ostream& os) const;

  // --- recording interface used by the op library ---
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;
  void record(const char* op, std::span<const Tensor* const> inputs,
              Tensor& out, BackwardFn fn);
  void record(const char* op, std::initializer_list<const Tensor*> inputs,
              Tensor& out, BackwardFn fn);
  /// Add g into the gradient slot of `input` if it is tracked on this tape.
  void accumulate(const Tensor& input, const Tensor& g);

 private:
  int add_node(Tensor& t, bool requires_grad, bool is_leaf);

  struct NodeInfo {
    Shape shape;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  struct Entry {
    const char* op;
    std::vector<int> inputs;  // -1 marks an untracked constant
    int out;
    BackwardFn fn;
  };
  std::vector<NodeInfo> nodes_;
  std::vector<Entry> entries_;
  std::vector<Tensor> grads_;  // parallel to nodes_; undefined until touched
  bool backward_done_ = false;
  const char* current_entry_op_ = nullptr;
};

// ---------------------------------------------------------------------------
// Primitive ops. Binary elementwise ops broadcast the right operand when its
// shape is {1}, {C} against the last axis, or {H,W} against the leading two
// axes of a rank-3 tensor. All ops validate shapes and finiteness and name
// themselves in error messages.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor one_minus(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

/// x ** g elementwise with x >= 0; g has shape {1} or {C} (last axis).
Tensor pow_channels(const Tensor& x, const Tensor& g);
/// Pass-through gradient inside [lo, hi], zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);
/// Elementwise floor; derivative defined as zero.
Tensor floor_const(const Tensor& x);

Tensor sum(const Tensor& x);                  // -> {1}
Tensor mean(const Tensor& x);                 // -> {1}
Tensor sum_cols(const Tensor& x);             // {n,m} -> {n}
Tensor add_bias(const Tensor& x, const Tensor& b);  // {n,m} + {m}

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor concat_cols(std::span<const Tensor> xs);
Tensor concat_rows(std::span<const Tensor> xs);

Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// Batch norm over axis 0 of {n,d}. Training mode normalizes with batch
/// statistics and updates the (untracked) running buffers in place; eval mode
/// normalizes with the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

/// Same-size convolution of {H,W,C} with an odd k x k kernel shared across
/// channels, zero padding outside the image.
Tensor conv2d(const Tensor& x, const Tensor& k);
/// Valid-region mean pooling with square window and stride.
Tensor avg_pool(const Tensor& x, int win, int stride);

/// Sample {H,W,C} at grid {Ho,Wo,2} of (row, col) pixel coordinates with
/// bilinear weights; reads outside the image are zero. Differentiable in both
/// the image and the grid.
Tensor bilinear_grid_sample(const Tensor& x, const Tensor& grid);
/// Backward-warp sampling grid for a 3x3 homography acting on (col, row, 1).
Tensor homography_grid(const Tensor& A, int h, int w);

/// Orthonormal type-II DCT / inverse per 8x8 block per channel of {H,W,C}.
/// H and W must be multiples of 8.
Tensor dct2d(const Tensor& x);
Tensor idct2d(const Tensor& x);
constexpr int kDctBlock = 8;

/// Differentiable rounding surrogate: floor(z) + sigmoid(a*(z-floor(z))) - 0.5
/// with the floor treated as constant in the backward pass. `sharpness` has
/// shape {1}.
Tensor smooth_quantize(const Tensor& z, const Tensor& sharpness);

/// Per-row cosine similarity of two {n,d} tensors -> {n}. Raises on a row
/// with (near-)zero norm.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

/// Inverted-dropout mask applied in training mode; identity in eval mode.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

/// Barrier wrapper that also works for untracked tensors (returns x as-is).
Tensor stop_grad(const Tensor& x);

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct FdReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Compare the tape gradient of scalar-valued f against central finite
/// differences at `point`. f must be deterministic; it is probed twice at the
/// base point and a mismatch raises EngineError. When coord_stride > 1 only
/// every coord_stride-th coordinate is probed (deterministic subsample for
/// large parameter blocks).
FdReport finite_diff_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& point, double eps = 1e-5, double tol = 1e-6,
    int coord_stride = 1);

}  // namespace tiacam
