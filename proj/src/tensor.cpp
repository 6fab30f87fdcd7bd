#include "lobf/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lobf {

namespace testhook {
bool corrupt_tanh_backward = false;
}

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

using EigenMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EigenConstMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void gemm(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
          double* out) {
  EigenConstMap ma(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  EigenConstMap mb(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  EigenMap mo(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mo.noalias() = ma * mb;
}

// out += a * b^T  with a [m x k], b [n x k]
void gemm_nt_acc(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
                 double* out) {
  EigenConstMap ma(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  EigenConstMap mb(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  EigenMap mo(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mo.noalias() += ma * mb.transpose();
}

// out += a^T * b  with a [k x m], b [k x n]
void gemm_tn_acc(const double* a, std::size_t k, std::size_t m, const double* b, std::size_t n,
                 double* out) {
  EigenConstMap ma(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  EigenConstMap mb(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  EigenMap mo(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  mo.noalias() += ma.transpose() * mb;
}

// Prepares gradient buffers and returns true when the op should record.
bool tracking(Tape* tape, std::initializer_list<Tensor*> inputs, Tensor& out) {
  if (!tape) return false;
  for (Tensor* t : inputs) t->ensure_grad();
  out.ensure_grad();
  return true;
}

Tensor unary_op(const Tensor& a, Tape* tape, const std::function<double(double)>& fwd,
                const std::function<double(double, double, double)>& dfn) {
  Tensor out = Tensor::zeros(a.shape());
  const double* x = a.data();
  double* y = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  Tensor in = a;
  if (tracking(tape, {&in}, out)) {
    tape->record([in, out, dfn]() mutable {
      const double* x = in.data();
      const double* y = out.data();
      const double* gy = out.grad();
      double* gx = in.grad();
      const std::size_t n = in.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += dfn(x[i], y[i], gy[i]);
    });
  }
  return out;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(shape_numel(t.impl_->shape), 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("Tape::backward: output must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.has_grad()) {
    throw ContractError("Tape::backward: output was not recorded on this tape");
  }
  loss.grad()[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  Tensor ia = a, ib = b;
  if (tracking(tape, {&ia, &ib}, out)) {
    tape->record([ia, ib, out]() mutable {
      const double* g = out.grad();
      double* ga = ia.grad();
      double* gb = ib.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  Tensor ia = a, ib = b;
  if (tracking(tape, {&ia, &ib}, out)) {
    tape->record([ia, ib, out]() mutable {
      const double* g = out.grad();
      double* ga = ia.grad();
      double* gb = ib.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  Tensor ia = a, ib = b;
  if (tracking(tape, {&ia, &ib}, out)) {
    tape->record([ia, ib, out]() mutable {
      const double* g = out.grad();
      const double* xa = ia.data();
      const double* xb = ib.data();
      double* ga = ia.grad();
      double* gb = ib.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i] * xb[i];
        gb[i] += g[i] * xa[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
  return unary_op(
      a, tape, [c](double x) { return c * x; },
      [c](double, double, double gy) { return c * gy; });
}

Tensor add_scalar(const Tensor& a, double c, Tape* tape) {
  return unary_op(
      a, tape, [c](double x) { return x + c; },
      [](double, double, double gy) { return gy; });
}

Tensor tanh(const Tensor& a, Tape* tape) {
  return unary_op(
      a, tape, [](double x) { return std::tanh(x); },
      [](double, double y, double gy) {
        double d = 1.0 - y * y;
        if (testhook::corrupt_tanh_backward) d += 0.5;
        return gy * d;
      });
}

Tensor sigmoid(const Tensor& a, Tape* tape) {
  return unary_op(
      a, tape, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y, double gy) { return gy * y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& a, double slope, Tape* tape) {
  return unary_op(
      a, tape, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double, double gy) { return gy * (x > 0.0 ? 1.0 : slope); });
}

Tensor log(const Tensor& a, Tape* tape) {
  return unary_op(
      a, tape, [](double x) { return std::log(x); },
      [](double x, double, double gy) { return gy / x; });
}

Tensor clamp_min(const Tensor& a, double lo, Tape* tape) {
  return unary_op(
      a, tape, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double, double gy) { return x < lo ? 0.0 : gy; });
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: operands must be 2-D: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm(a.data(), m, k, b.data(), n, out.data());
  Tensor ia = a, ib = b;
  if (tracking(tape, {&ia, &ib}, out)) {
    tape->record([ia, ib, out, m, k, n]() mutable {
      gemm_nt_acc(out.grad(), m, n, ib.data(), k, ia.grad());  // dA += dC * B^T
      gemm_tn_acc(ia.data(), m, k, out.grad(), n, ib.grad());  // dB += A^T * dC
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& a, Tape* tape) {
  if (a.rank() != 2) {
    throw ShapeError("transpose2d: operand must be 2-D: " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto idx = std::make_shared<std::vector<long>>(r * c);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) (*idx)[j * r + i] = static_cast<long>(i * c + j);
  return index_map(a, idx, {c, r}, tape);
}

Tensor index_map(const Tensor& x, std::shared_ptr<const std::vector<long>> idx, Shape out_shape,
                 Tape* tape) {
  if (idx->size() != shape_numel(out_shape)) {
    throw ShapeError("index_map: index count " + std::to_string(idx->size()) +
                     " does not match output " + shape_str(out_shape));
  }
  Tensor out = Tensor::zeros(std::move(out_shape));
  const double* src = x.data();
  double* dst = out.data();
  const long limit = static_cast<long>(x.numel());
  const std::size_t n = idx->size();
  for (std::size_t i = 0; i < n; ++i) {
    long j = (*idx)[i];
    if (j >= limit) {
      throw ShapeError("index_map: index " + std::to_string(j) + " out of range for " +
                       shape_str(x.shape()));
    }
    dst[i] = j < 0 ? 0.0 : src[j];
  }
  Tensor in = x;
  if (tracking(tape, {&in}, out)) {
    tape->record([in, out, idx]() mutable {
      const double* g = out.grad();
      double* gx = in.grad();
      const std::size_t n = idx->size();
      for (std::size_t i = 0; i < n; ++i) {
        long j = (*idx)[i];
        if (j >= 0) gx[j] += g[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor out = Tensor::from(std::move(new_shape), x.values());
  Tensor in = x;
  if (tracking(tape, {&in}, out)) {
    tape->record([in, out]() mutable {
      const double* g = out.grad();
      double* gx = in.grad();
      const std::size_t n = in.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis, Tape* tape) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != ref.size()) {
      throw ShapeError("concat: rank mismatch: " + shape_str(ref) + " vs " + shape_str(p.shape()));
    }
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) {
        throw ShapeError("concat: shapes differ off-axis: " + shape_str(ref) + " vs " +
                         shape_str(p.shape()));
      }
    }
    axis_total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];

  Tensor out = Tensor::zeros(out_shape);
  double* dst = out.data();
  const std::size_t out_stride = axis_total * inner;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.dim(axis) * inner;
    const double* src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * len, src + (o + 1) * len, dst + o * out_stride + offset);
    }
    offset += len;
  }

  if (tape) {
    std::vector<Tensor> ins = parts;
    for (Tensor& t : ins) t.ensure_grad();
    out.ensure_grad();
    tape->record([ins, out, outer, out_stride]() mutable {
      const double* g = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : ins) {
        const std::size_t len = p.numel() / outer;  // dim(axis) * inner
        double* gp = p.grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* gs = g + o * out_stride + offset;
          double* gd = gp + o * len;
          for (std::size_t i = 0; i < len; ++i) gd[i] += gs[i];
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor chunk_cols(const Tensor& x, std::size_t c0, std::size_t c1, Tape* tape) {
  if (x.rank() != 2) throw ShapeError("chunk_cols: operand must be 2-D: " + shape_str(x.shape()));
  if (c1 > x.dim(1) || c0 >= c1) {
    throw ShapeError("chunk_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
  auto idx = std::make_shared<std::vector<long>>(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c)
      (*idx)[r * w + c] = static_cast<long>(r * cols + c0 + c);
  return index_map(x, idx, {rows, w}, tape);
}

Tensor tile_cols(const Tensor& x, std::size_t n, Tape* tape) {
  if (x.rank() != 2 || x.dim(1) != 1) {
    throw ShapeError("tile_cols: operand must be [B x 1]: " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  auto idx = std::make_shared<std::vector<long>>(rows * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) (*idx)[r * n + c] = static_cast<long>(r);
  return index_map(x, idx, {rows, n}, tape);
}

Tensor expand_rows(const Tensor& v, std::size_t rows, Tape* tape) {
  if (v.rank() != 1) throw ShapeError("expand_rows: operand must be 1-D: " + shape_str(v.shape()));
  const std::size_t c = v.dim(0);
  auto idx = std::make_shared<std::vector<long>>(rows * c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) (*idx)[r * c + j] = static_cast<long>(j);
  return index_map(v, idx, {rows, c}, tape);
}

Tensor sum_all(const Tensor& a, Tape* tape) {
  double s = 0.0;
  const double* x = a.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  Tensor in = a;
  if (tracking(tape, {&in}, out)) {
    tape->record([in, out]() mutable {
      const double g = out.grad()[0];
      double* gx = in.grad();
      const std::size_t n = in.numel();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  const std::size_t C = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  const double* in = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!std::isfinite(in[i])) {
      throw NumericError("softmax: non-finite input at flat index " + std::to_string(i));
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  double* y = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * C * inner + i;
      double mx = in[base];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, in[base + c * inner]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        double e = std::exp(in[base + c * inner] - mx);
        y[base + c * inner] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) y[base + c * inner] /= z;
    }
  }

  Tensor tin = x;
  if (tracking(tape, {&tin}, out)) {
    tape->record([tin, out, outer, inner, C]() mutable {
      const double* y = out.data();
      const double* gy = out.grad();
      double* gx = tin.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * C * inner + i;
          double dot = 0.0;
          for (std::size_t c = 0; c < C; ++c) dot += gy[base + c * inner] * y[base + c * inner];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t k = base + c * inner;
            gx[k] += y[k] * (gy[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, const Tensor& x,
                  double eps) {
  Tensor probe = x.clone();
  Tape tape;
  Tensor out = f(&tape, probe);
  if (out.numel() != 1) {
    throw ContractError("grad_check: function output must be scalar, got " +
                        shape_str(out.shape()));
  }
  tape.backward(out);
  std::vector<double> analytic = probe.grad_values();
  if (analytic.empty()) analytic.assign(probe.numel(), 0.0);

  double worst = 0.0;
  Tensor fd_point = x.clone();
  for (std::size_t i = 0; i < fd_point.numel(); ++i) {
    const double saved = fd_point.data()[i];
    fd_point.data()[i] = saved + eps;
    const double hi = f(nullptr, fd_point).item();
    fd_point.data()[i] = saved - eps;
    const double lo = f(nullptr, fd_point).item();
    fd_point.data()[i] = saved;
    const double fd = (hi - lo) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace lobf
