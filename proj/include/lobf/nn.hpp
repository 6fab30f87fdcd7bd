#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lobf/rng.hpp"
#include "lobf/tensor.hpp"

namespace lobf {

// Named views into a model's parameter tensors, in a stable order. The
// pointers let checkpoint loading swap storage in place.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

enum class Padding { valid, same };

// 2-D convolution computed as cross-correlation (no kernel flip) through
// im2col + GEMM. With `same` padding the spatial output dims are
// ceil(in / stride); with `valid` they follow the floor formula.
struct Conv2dLayer {
  Tensor kernel;  // [outC x inC x kH x kW]
  Tensor bias;    // [outC]
  std::size_t stride_h = 1, stride_w = 1;
  Padding padding = Padding::valid;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }

  static Conv2dLayer init(std::size_t out_c, std::size_t in_c, std::size_t k_h, std::size_t k_w,
                          std::size_t s_h, std::size_t s_w, Padding pad, Rng& rng);

  void collect(const std::string& prefix, ParamRefs& out);
};

// x: [B x inC x H x W] -> [B x outC x H' x W'], differentiable in kernel,
// bias and input.
Tensor conv2d_forward(const Conv2dLayer& layer, const Tensor& x, Tape* tape = nullptr);

// Output spatial dims for the given input dims; throws ShapeError when the
// kernel does not fit the (padded) input.
std::pair<std::size_t, std::size_t> conv2d_output_dims(const Conv2dLayer& layer, std::size_t h,
                                                       std::size_t w);

// Max pooling over kH x kW windows; padded positions are ignored, not
// treated as zeros.
Tensor maxpool2d(const Tensor& x, std::size_t k_h, std::size_t k_w, std::size_t s_h,
                 std::size_t s_w, Padding pad, Tape* tape = nullptr);

// W: [O x I], b: [O], x: [B x I] -> x W^T + b.
Tensor dense_forward(const Tensor& w, const Tensor& b, const Tensor& x, Tape* tape = nullptr);

// Single LSTM cell with stacked gate weights. Gate blocks are ordered
// (input, forget, cell, output) along the first axis of W; the column
// layout pairs the step input first, the previous hidden state second.
struct LstmCell {
  Tensor W;  // [4H x (I+H)]
  Tensor b;  // [4H]
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  static LstmCell init(std::size_t input, std::size_t hidden, Rng& rng);

  // One update: returns (h', c'). `w_t` must be transpose2d(W) recorded on
  // the same tape; sequence drivers hoist it out of the time loop.
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c,
                                 const Tensor& w_t, Tape* tape = nullptr) const;
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c,
                                 Tape* tape = nullptr) const;

  void collect(const std::string& prefix, ParamRefs& out);
};

// Three parallel branches over a [B x C x T x 1] feature map, each emitting
// `filters` channels, concatenated to 3*filters. All branches preserve T.
struct InceptionBlock {
  Conv2dLayer reduce3, conv3;  // 1x1 -> 3x1
  Conv2dLayer reduce5, conv5;  // 1x1 -> 5x1
  Conv2dLayer pool_proj;       // 3x1 max-pool -> 1x1
  std::size_t filters = 0;

  static InceptionBlock init(std::size_t in_channels, std::size_t filters, Rng& rng);

  void collect(const std::string& prefix, ParamRefs& out);
};

Tensor inception_forward(const InceptionBlock& block, const Tensor& x, Tape* tape = nullptr);

// Glorot-uniform fill: +-sqrt(6 / (fan_in + fan_out)).
void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace lobf
