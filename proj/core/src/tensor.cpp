#include "tiacam/tensor.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace tiacam {

namespace {
Precision g_precision = Precision::f64;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '{';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << '}';
  return os.str();
}

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw EngineError("tensor: negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

void maybe_round_f32(std::vector<double>& v) {
  if (g_precision == Precision::f32) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace detail

Tensor::Tensor(Shape shape)
    : data_(std::make_shared<std::vector<double>>(
          static_cast<size_t>(shape_size(shape)), 0.0)),
      shape_(std::move(shape)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : data_(std::make_shared<std::vector<double>>(std::move(values))),
      shape_(std::move(shape)) {
  if (static_cast<int64_t>(data_->size()) != shape_size(shape_)) {
    throw EngineError("tensor: value count " + std::to_string(data_->size()) +
                      " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : *t.data_) x = v;
  return t;
}

double Tensor::item() const {
  if (!data_ || data_->size() != 1) {
    throw EngineError("tensor: item() on non-scalar of shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  if (!data_) return Tensor();
  Tensor t(shape_, *data_);
  return t;
}

// --------------------------------------------------------------------------
// Tape

int Tape::add_node(Tensor& t, bool requires_grad, bool is_leaf) {
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(NodeInfo{t.shape(), requires_grad, is_leaf});
  grads_.emplace_back();
  return t.node_;
}

Tensor Tape::leaf(const Tensor& value, bool requires_grad) {
  if (!value.defined()) throw EngineError("tape: leaf() on undefined tensor");
  Tensor t = value;  // shares buffer
  t.tape_ = nullptr;
  t.node_ = -1;
  detail::maybe_round_f32(t.vec());
  add_node(t, requires_grad, /*is_leaf=*/true);
  return t;
}

Tensor Tape::barrier(const Tensor& x) {
  if (!x.defined()) throw EngineError("tape: barrier() on undefined tensor");
  Tensor out = x;  // same values
  out.tape_ = nullptr;
  out.node_ = -1;
  add_node(out, /*requires_grad=*/false, /*is_leaf=*/false);
  // Recorded for the dump; the backward closure is a deliberate no-op.
  int in_node = (x.tape() == this) ? x.node() : -1;
  entries_.push_back(Entry{"stop_grad", {in_node}, out.node_,
                           [](Tape&, const Tensor&) {}});
  return out;
}

void Tape::record(const char* op, std::span<const Tensor* const> inputs,
                  Tensor& out, BackwardFn fn) {
  if (!detail::all_finite(out.vec())) {
    throw EngineError(std::string(op) + ": non-finite value in forward output");
  }
  detail::maybe_round_f32(out.vec());
  add_node(out, /*requires_grad=*/false, /*is_leaf=*/false);
  Entry e;
  e.op = op;
  for (const Tensor* t : inputs) {
    e.inputs.push_back((t->tape() == this) ? t->node() : -1);
  }
  e.out = out.node_;
  e.fn = std::move(fn);
  entries_.push_back(std::move(e));
}

void Tape::record(const char* op, std::initializer_list<const Tensor*> inputs,
                  Tensor& out, BackwardFn fn) {
  std::vector<const Tensor*> v(inputs);
  record(op, std::span<const Tensor* const>(v.data(), v.size()), out,
         std::move(fn));
}

void Tape::accumulate(const Tensor& input, const Tensor& g) {
  if (input.tape() != this) return;  // constant w.r.t. this tape
  int id = input.node();
  const NodeInfo& info = nodes_[static_cast<size_t>(id)];
  if (info.is_leaf && !info.requires_grad) return;
  if (g.shape() != info.shape) {
    throw EngineError(std::string(current_entry_op_ ? current_entry_op_ : "?") +
                      ": gradient shape " + shape_str(g.shape()) +
                      " does not match node shape " + shape_str(info.shape));
  }
  if (!detail::all_finite(g.vec())) {
    throw EngineError(std::string("backward through ") +
                      (current_entry_op_ ? current_entry_op_ : "?") +
                      ": non-finite gradient");
  }
  Tensor& slot = grads_[static_cast<size_t>(id)];
  if (!slot.defined()) {
    slot = g.clone();
  } else {
    double* d = slot.data();
    const double* s = g.data();
    for (int64_t i = 0; i < slot.size(); ++i) d[i] += s[i];
  }
  detail::maybe_round_f32(slot.vec());
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw EngineError("tape: backward() called twice");
  if (loss.tape() != this) {
    throw EngineError("tape: backward() loss is not recorded on this tape");
  }
  if (loss.size() != 1) {
    throw EngineError("tape: backward() requires a scalar loss, got shape " +
                      shape_str(loss.shape()));
  }
  backward_done_ = true;
  grads_[static_cast<size_t>(loss.node())] = Tensor::full(loss.shape(), 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const Tensor& gout = grads_[static_cast<size_t>(it->out)];
    if (!gout.defined()) continue;
    current_entry_op_ = it->op;
    it->fn(*this, gout);
  }
  current_entry_op_ = nullptr;
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape() != this) {
    throw EngineError("tape: grad() queried for a tensor not on this tape");
  }
  if (!backward_done_) throw EngineError("tape: grad() before backward()");
  const Tensor& g = grads_[static_cast<size_t>(t.node())];
  if (g.defined()) return g;
  return Tensor::zeros(t.shape());
}

void Tape::dump(std::ostream& os) const {
  os << "tape: " << nodes_.size() << " nodes, " << entries_.size()
     << " entries\n";
  for (const Entry& e : entries_) {
    os << "  [" << e.out << "] " << e.op << "(";
    for (size_t i = 0; i < e.inputs.size(); ++i) {
      if (i) os << ", ";
      if (e.inputs[i] < 0) {
        os << "const";
      } else {
        os << e.inputs[i];
      }
    }
    os << ") -> " << shape_str(nodes_[static_cast<size_t>(e.out)].shape) << "\n";
  }
}

Tensor stop_grad(const Tensor& x) {
  if (!x.tracked()) return x;
  return x.tape()->barrier(x);
}

}  // namespace tiacam
