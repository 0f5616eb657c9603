#pragma once

// Dense double-precision tensors with taped reverse-mode differentiation.
//
// Tensors are cheap handles onto shared storage. Operations compute eagerly;
// when a Tape is supplied and an input tracks gradients, the op records a
// backward closure. backward() replays the tape once, in reverse, and
// accumulates into each tracked tensor's grad buffer.
//
// Everything is 64-bit IEEE-754 and single-threaded per tape; forward results
// are bit-identical across runs because every reduction has a fixed order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtd/error.hpp"

namespace mtd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    out << (i ? "x" : "") << shape[i];
  out << "]";
  return out.str();
}

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<Impl>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0);
    if (requires_grad) t.enable_grad();
    return t;
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.impl_->data) x = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("Tensor::from: " + shape_str(shape) +
                           " does not hold " + std::to_string(values.size()) +
                           " values");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    if (requires_grad) t.enable_grad();
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::size_t dim(std::size_t i) const {
    if (i >= impl_->shape.size())
      throw DimensionError("Tensor::dim: axis " + std::to_string(i) +
                           " out of range for " + shape_str(impl_->shape));
    return impl_->shape[i];
  }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  double item() const {
    if (numel() != 1)
      throw DimensionError("Tensor::item: tensor " + shape_str(impl_->shape) +
                           " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }

  void enable_grad() {
    impl_->requires_grad = true;
    if (impl_->grad.size() != impl_->data.size())
      impl_->grad.assign(impl_->data.size(), 0.0);
  }

  bool has_grad() const { return impl_->requires_grad; }

  std::vector<double>& grad() {
    if (!impl_->requires_grad)
      throw StateError("Tensor::grad: tensor does not track gradients");
    return impl_->grad;
  }
  const std::vector<double>& grad() const {
    if (!impl_->requires_grad)
      throw StateError("Tensor::grad: tensor does not track gradients");
    return impl_->grad;
  }

  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  // Deep copy of the values; the copy tracks gradients iff the source does,
  // with a fresh zero grad buffer.
  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    if (impl_->requires_grad) t.enable_grad();
    return t;
  }

  // Identity of the underlying storage, not value equality.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of executed operations. Replaying in reverse visits each
// recorded op exactly once; a tape can be consumed by backward() once.
class Tape {
 public:
  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1)
    throw DimensionError("backward: loss must be scalar, got " +
                         shape_str(loss.shape()));
  if (tape.consumed_)
    throw StateError("backward: tape already consumed; reset before reuse");
  tape.consumed_ = true;
  if (loss.requires_grad()) {
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
  }
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) (*it)();
}

namespace detail {

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + ": expected rank " +
                         std::to_string(r) + " tensor, got " +
                         shape_str(t.shape()));
}

inline bool track(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::track(tape, {&a, &b})) {
    out.enable_grad();
    tape->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::track(tape, {&a, &b})) {
    out.enable_grad();
    tape->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          a.grad()[i] += g[i] * b.data()[i];
      if (b.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i)
          b.grad()[i] += g[i] * a.data()[i];
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double factor, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (detail::track(tape, {&a})) {
    out.enable_grad();
    tape->record([a, out, factor]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * factor;
    });
  }
  return out;
}

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  Tensor out = Tensor::scalar(total);
  if (detail::track(tape, {&a})) {
    out.enable_grad();
    tape->record([a, out]() mutable {
      const double g = out.grad()[0];
      for (double& gi : a.grad()) gi += g;
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), a.data());
  if (detail::track(tape, {&a})) {
    out.enable_grad();
    tape->record([a, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    if (v >= 0.0) {
      out.data()[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out.data()[i] = e / (1.0 + e);
    }
  }
  if (detail::track(tape, {&x})) {
    out.enable_grad();
    tape->record([x, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = out.data()[i];
        x.grad()[i] += g[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

inline Tensor gelu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  if (detail::track(tape, {&x})) {
    out.enable_grad();
    tape->record([x, out]() mutable {
      static const double inv_sqrt_2pi = 0.3989422804014326779399461;
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        x.grad()[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = pa[i * k + kk];
        const double* brow = pb + kk * n;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
  }
  if (detail::track(tape, {&a, &b})) {
    out.enable_grad();
    tape->record([a, b, out, m, k, n]() mutable {
      const double* gc = out.grad().data();
      if (a.requires_grad()) {
        // dA = dC * B^T
        const double* pb = b.data().data();
        double* ga = a.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* grow = gc + i * n;
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + kk] += s;
          }
      }
      if (b.requires_grad()) {
        // dB = A^T * dC
        const double* pa = a.data().data();
        double* gb = b.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            const double* grow = gc + i * n;
            double* gbrow = gb + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
          }
      }
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T -> [m x n]; avoids materializing transposes.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b,
                        Tape* tape = nullptr) {
  detail::require_rank(a, 2, "matmul_nt lhs");
  detail::require_rank(b, 2, "matmul_nt rhs");
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        const double* arow = pa + i * k;
        const double* brow = pb + j * k;
        for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        pc[i * n + j] = s;
      }
  }
  if (detail::track(tape, {&a, &b})) {
    out.enable_grad();
    tape->record([a, b, out, m, k, n]() mutable {
      const double* gc = out.grad().data();
      if (a.requires_grad()) {
        // dA = dC * B
        const double* pb = b.data().data();
        double* ga = a.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = gc[i * n + j];
            if (g == 0.0) continue;
            const double* brow = pb + j * k;
            double* garow = ga + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += g * brow[kk];
          }
      }
      if (b.requires_grad()) {
        // dB = dC^T * A
        const double* pa = a.data().data();
        double* gb = b.grad().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = gc[i * n + j];
            if (g == 0.0) continue;
            const double* arow = pa + i * k;
            double* gbrow = gb + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) gbrow[kk] += g * arow[kk];
          }
      }
    });
  }
  return out;
}

// Adds a length-k bias vector to every row of x[n x k].
inline Tensor add_bias_rows(const Tensor& x, const Tensor& bias,
                            Tape* tape = nullptr) {
  detail::require_rank(x, 2, "add_bias_rows input");
  detail::require_rank(bias, 1, "add_bias_rows bias");
  if (x.cols() != bias.dim(0))
    throw DimensionError("add_bias_rows: " + shape_str(x.shape()) +
                         " incompatible with bias " + shape_str(bias.shape()));
  const std::size_t n = x.rows(), k = x.cols();
  Tensor out = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out.data()[i * k + j] = x.data()[i * k + j] + bias.data()[j];
  if (detail::track(tape, {&x, &bias})) {
    out.enable_grad();
    tape->record([x, bias, out, n, k]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad())
        for (std::size_t i = 0; i < n * k; ++i) x.grad()[i] += g[i];
      if (bias.requires_grad())
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) bias.grad()[j] += g[i * k + j];
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1,
                         Tape* tape = nullptr) {
  detail::require_rank(x, 2, "slice_cols input");
  if (c0 >= c1 || c1 > x.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " +
                         shape_str(x.shape()));
  const std::size_t n = x.rows(), k = x.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out.data()[i * w + j] = x.data()[i * k + c0 + j];
  if (detail::track(tape, {&x})) {
    out.enable_grad();
    tape->record([x, out, n, k, w, c0]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
          x.grad()[i * k + c0 + j] += g[i * w + j];
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts,
                          Tape* tape = nullptr) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require_rank(p, 2, "concat_cols input");
    if (p.rows() != n)
      throw DimensionError("concat_cols: row mismatch: " +
                           shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.data()[i * total + offset + j] = p.data()[i * w + j];
    offset += w;
  }
  bool tracked = false;
  if (tape)
    for (const Tensor& p : parts)
      if (p.requires_grad()) tracked = true;
  if (tracked) {
    out.enable_grad();
    tape->record([parts, out, n, total]() mutable {
      const auto& g = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : parts) {
        const std::size_t w = p.cols();
        if (p.requires_grad())
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j)
              p.grad()[i * w + j] += g[i * total + offset + j];
        offset += w;
      }
    });
  }
  return out;
}

// Gathers table rows by index: out[i, :] = table[ids[i], :].
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& ids,
                         Tape* tape = nullptr) {
  detail::require_rank(table, 2, "embed_rows table");
  const std::size_t rows = table.rows(), width = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= rows)
      throw DimensionError("embed_rows: id " + std::to_string(id) +
                           " out of range for table " +
                           shape_str(table.shape()));
  const std::size_t n = ids.size();
  Tensor out = Tensor::zeros({n, width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j)
      out.data()[i * width + j] =
          table.data()[static_cast<std::size_t>(ids[i]) * width + j];
  if (detail::track(tape, {&table})) {
    out.enable_grad();
    tape->record([table, out, ids, n, width]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        double* trow =
            table.grad().data() + static_cast<std::size_t>(ids[i]) * width;
        for (std::size_t j = 0; j < width; ++j) trow[j] += g[i * width + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------------

// Row-wise softmax with per-row max subtraction, so exp never overflows.
inline Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr) {
  detail::require_rank(x, 2, "softmax_rows input");
  if (x.cols() < 1)
    throw DimensionError("softmax_rows: rows must have at least one column");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double* orow = out.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= denom;
  }
  if (detail::track(tape, {&x})) {
    out.enable_grad();
    tape->record([x, out, r, c]() mutable {
      for (std::size_t i = 0; i < r; ++i) {
        const double* p = out.data().data() + i * c;
        const double* g = out.grad().data() + i * c;
        double inner = 0.0;
        for (std::size_t j = 0; j < c; ++j) inner += g[j] * p[j];
        double* gx = x.grad().data() + i * c;
        for (std::size_t j = 0; j < c; ++j) gx[j] += p[j] * (g[j] - inner);
      }
    });
  }
  return out;
}

// Adds a large negative constant to entries above the diagonal, which zeroes
// them out under a following softmax. Gradient is the identity.
inline Tensor add_causal_mask(const Tensor& scores, Tape* tape = nullptr) {
  detail::require_rank(scores, 2, "add_causal_mask input");
  if (scores.rows() != scores.cols())
    throw DimensionError("add_causal_mask: scores must be square, got " +
                         shape_str(scores.shape()));
  static constexpr double kMasked = -1e30;
  const std::size_t n = scores.rows();
  Tensor out = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = scores.data()[i * n + j] + (j > i ? kMasked : 0.0);
  if (detail::track(tape, {&scores})) {
    out.enable_grad();
    tape->record([scores, out]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) scores.grad()[i] += g[i];
    });
  }
  return out;
}

// Mean of the rows of x selected by a 0/1 mask. Backward distributes
// 1/(number of selected rows) to each selected row.
inline Tensor mean_rows(const Tensor& x, const Tensor& mask,
                        Tape* tape = nullptr) {
  detail::require_rank(x, 2, "mean_rows input");
  detail::require_rank(mask, 1, "mean_rows mask");
  const std::size_t n = x.rows(), d = x.cols();
  if (mask.dim(0) != n)
    throw DimensionError("mean_rows: mask " + shape_str(mask.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  std::size_t count = 0;
  for (double m : mask.data()) {
    if (m != 0.0 && m != 1.0)
      throw DimensionError("mean_rows: mask entries must be 0 or 1");
    if (m == 1.0) ++count;
  }
  if (count == 0)
    throw EmptyPoolError("mean_rows: mask selects no rows");
  Tensor out = Tensor::zeros({d});
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.data()[i] != 1.0) continue;
    for (std::size_t j = 0; j < d; ++j) out.data()[j] += x.data()[i * d + j];
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t j = 0; j < d; ++j) out.data()[j] *= inv;
  if (detail::track(tape, {&x})) {
    out.enable_grad();
    tape->record([x, mask, out, n, d, inv]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (mask.data()[i] != 1.0) continue;
        for (std::size_t j = 0; j < d; ++j) x.grad()[i * d + j] += g[j] * inv;
      }
    });
  }
  return out;
}

// Per-row layer normalization with learnable gain/offset.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                              const Tensor& offset, Tape* tape = nullptr,
                              double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm_rows input");
  detail::require_rank(gain, 1, "layer_norm_rows gain");
  detail::require_rank(offset, 1, "layer_norm_rows offset");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.dim(0) != d || offset.dim(0) != d)
    throw DimensionError("layer_norm_rows: gain/offset must have length " +
                         std::to_string(d));
  Tensor out = Tensor::zeros({n, d});
  std::vector<double> inv_std(n), normalized(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[i] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xn = (row[j] - mean) * istd;
      normalized[i * d + j] = xn;
      out.data()[i * d + j] = gain.data()[j] * xn + offset.data()[j];
    }
  }
  if (detail::track(tape, {&x, &gain, &offset})) {
    out.enable_grad();
    tape->record(
        [x, gain, offset, out, n, d, inv_std = std::move(inv_std),
         normalized = std::move(normalized)]() mutable {
          const auto& g = out.grad();
          if (gain.requires_grad() || offset.requires_grad()) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < d; ++j) {
                const double gij = g[i * d + j];
                if (gain.requires_grad())
                  gain.grad()[j] += gij * normalized[i * d + j];
                if (offset.requires_grad()) offset.grad()[j] += gij;
              }
          }
          if (x.requires_grad()) {
            for (std::size_t i = 0; i < n; ++i) {
              // dxh = g * gain; dx = istd * (dxh - mean(dxh) - xh*mean(dxh*xh))
              double mean_dxh = 0.0, mean_dxh_xh = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double dxh = g[i * d + j] * gain.data()[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * normalized[i * d + j];
              }
              mean_dxh /= static_cast<double>(d);
              mean_dxh_xh /= static_cast<double>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const double dxh = g[i * d + j] * gain.data()[j];
                x.grad()[i * d + j] +=
                    inv_std[i] * (dxh - mean_dxh -
                                  normalized[i * d + j] * mean_dxh_xh);
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Binary cross-entropy of a probability against a 0/1 label. The zero-weighted
// log term is skipped outright, so a saturated correct prediction yields an
// exact 0 rather than 0 * inf.
inline Tensor bce_loss(const Tensor& prob, int label, Tape* tape = nullptr) {
  if (prob.numel() != 1)
    throw DimensionError("bce_loss: probability must be scalar, got " +
                         shape_str(prob.shape()));
  if (label != 0 && label != 1)
    throw SchemaError("bce_loss: label must be 0 or 1, got " +
                      std::to_string(label));
  const double p = prob.data()[0];
  const double value = label == 1 ? -std::log(p) : -std::log(1.0 - p);
  Tensor out = Tensor::scalar(value);
  if (detail::track(tape, {&prob})) {
    out.enable_grad();
    tape->record([prob, out, label]() mutable {
      const double g = out.grad()[0];
      const double p = prob.data()[0];
      prob.grad()[0] += g * (label == 1 ? -1.0 / p : 1.0 / (1.0 - p));
    });
  }
  return out;
}

enum class Reduction { Mean, Sum };

// Negative log-likelihood of target ids under row-wise softmax of the logits,
// summed (or averaged) over the given (row, target) pairs. log-softmax is
// fused with max subtraction.
inline Tensor nll_rows(const Tensor& logits,
                       const std::vector<std::pair<std::size_t, int>>& targets,
                       Reduction reduction, Tape* tape = nullptr) {
  detail::require_rank(logits, 2, "nll_rows logits");
  if (targets.empty())
    throw DimensionError("nll_rows: no target positions given");
  const std::size_t n = logits.rows(), v = logits.cols();
  for (const auto& [row, id] : targets) {
    if (row >= n)
      throw DimensionError("nll_rows: row " + std::to_string(row) +
                           " out of range for " + shape_str(logits.shape()));
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw DimensionError("nll_rows: target id " + std::to_string(id) +
                           " out of range for vocabulary " + std::to_string(v));
  }
  double total = 0.0;
  for (const auto& [row, id] : targets) {
    const double* l = logits.data().data() + row * v;
    double mx = l[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, l[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < v; ++j) denom += std::exp(l[j] - mx);
    total += mx + std::log(denom) - l[static_cast<std::size_t>(id)];
  }
  const double m = static_cast<double>(targets.size());
  const double value = reduction == Reduction::Mean ? total / m : total;
  Tensor out = Tensor::scalar(value);
  if (detail::track(tape, {&logits})) {
    out.enable_grad();
    tape->record([logits, out, targets, v, m, reduction]() mutable {
      const double upstream = out.grad()[0];
      const double w =
          reduction == Reduction::Mean ? upstream / m : upstream;
      for (const auto& [row, id] : targets) {
        const double* l = logits.data().data() + row * v;
        double* gl = logits.grad().data() + row * v;
        double mx = l[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, l[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(l[j] - mx);
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(l[j] - mx) / denom;
          gl[j] += w * (p - (static_cast<std::size_t>(id) == j ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace mtd
