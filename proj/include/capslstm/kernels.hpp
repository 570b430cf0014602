#pragma once

#include <cstddef>

#include "capslstm/rng.hpp"
#include "capslstm/tensor.hpp"

namespace capslstm {

enum class Padding { Valid, Same };

// Zero padding applied before a convolution along one spatial axis.
struct PadSpec {
  std::size_t before = 0;
  std::size_t after = 0;
};

// "same": output = ceil(in / stride), symmetric zero pad with the odd cell on
// the bottom/right. "valid": no pad, output = floor((in - k) / stride) + 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);
PadSpec conv_padding(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// input [H,W,Cin], kernels [Kh,Kw,Cin,Cout], bias [Cout] -> [Ho,Wo,Cout].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride, Padding padding);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& upstream, std::size_t stride, Padding padding);

// a [M,K] x b [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& x, std::size_t axis);

// Vector-Jacobian product of softmax_axis given its output y.
template <typename T>
Tensor<T> softmax_axis_backward(const Tensor<T>& y, const Tensor<T>& upstream, std::size_t axis);

enum class Activation { None, Relu, Sigmoid, Tanh, Softmax };

const char* activation_name(Activation kind);

// Elementwise activations; Softmax is applied over the last axis.
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

// Given the activation output y, returns upstream * f'(x).
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& upstream, Activation kind);

// In-place uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, SeededRng& rng);

}  // namespace capslstm
