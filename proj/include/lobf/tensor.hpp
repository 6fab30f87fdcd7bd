#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lobf/errors.hpp"

namespace lobf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. Handles share storage: copying a
// Tensor copies a pointer, so a parameter held by a layer and the same
// parameter seen by an optimizer accumulate into one gradient buffer.
// The gradient buffer is allocated lazily when an op records onto a tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t numel() const { return impl_->data.size(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const;

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void ensure_grad();
  void zero_grad();
  double* grad() { return impl_->grad.data(); }
  const double* grad() const { return impl_->grad.data(); }
  std::vector<double> grad_values() const { return impl_->grad; }

  // Deep copy; the clone has fresh storage and no gradient buffer.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless participating in a tape
  };
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops append one backward closure each in execution
// order; backward() replays them once, in reverse. Single-threaded by
// contract: one training step owns one tape.
class Tape {
 public:
  void record(std::function<void()> backward) { steps_.push_back(std::move(backward)); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Tensor& loss);

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// ---- elementwise and scalar ops ------------------------------------------
// Shapes of tensor-tensor ops must match exactly; the only broadcasting is
// tensor-scalar.

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double c, Tape* tape = nullptr);
Tensor tanh(const Tensor& a, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& a, Tape* tape = nullptr);
Tensor leaky_relu(const Tensor& a, double slope = 0.01, Tape* tape = nullptr);
Tensor log(const Tensor& a, Tape* tape = nullptr);
Tensor clamp_min(const Tensor& a, double lo, Tape* tape = nullptr);

// ---- linear algebra -------------------------------------------------------

// [M x K] * [K x N] -> [M x N]. Backward: dA += dC * B^T, dB += A^T * dC.
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor transpose2d(const Tensor& a, Tape* tape = nullptr);

// ---- structure ops --------------------------------------------------------

// Generic gather: out.flat[i] = (idx[i] < 0) ? 0 : x.flat[idx[i]].
// Backward scatter-adds, which makes this one op cover slicing, tiling,
// permutation and im2col.
Tensor index_map(const Tensor& x, std::shared_ptr<const std::vector<long>> idx,
                 Shape out_shape, Tape* tape = nullptr);

Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape = nullptr);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis, Tape* tape = nullptr);

// Column range [c0, c1) of a 2-D tensor.
Tensor chunk_cols(const Tensor& x, std::size_t c0, std::size_t c1, Tape* tape = nullptr);
// [B x 1] -> [B x n] by repetition.
Tensor tile_cols(const Tensor& x, std::size_t n, Tape* tape = nullptr);
// [C] -> [rows x C] by repetition.
Tensor expand_rows(const Tensor& v, std::size_t rows, Tape* tape = nullptr);

// ---- reductions and normalization ----------------------------------------

Tensor sum_all(const Tensor& a, Tape* tape = nullptr);

// Max-subtracted softmax along `axis`. Output entries are in (0,1) and each
// slice along the axis sums to 1 within rounding.
Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape = nullptr);

// ---- gradient checking ----------------------------------------------------

// Compares the tape gradient of a scalar-valued function against central
// finite differences. Returns max over components of
// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
// f receives a tape (nullptr during the finite-difference evaluations) and
// the tensor to differentiate with respect to; it must return a scalar.
double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                  const Tensor& x, double eps = 1e-5);

namespace testhook {
// When set, the tanh backward rule is deliberately wrong. Used only by the
// gradient-check negative control.
extern bool corrupt_tanh_backward;
}  // namespace testhook

}  // namespace lobf
