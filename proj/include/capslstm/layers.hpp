#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capslstm/kernels.hpp"
#include "capslstm/rng.hpp"
#include "capslstm/tensor.hpp"

namespace capslstm {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value
};

// Named parameters of one layer with parallel gradient accumulators.
template <typename T>
class LayerParams {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;

  std::span<Parameter<T>> entries() noexcept { return entries_; }
  std::span<const Parameter<T>> entries() const noexcept { return entries_; }

  // Total number of scalar parameters.
  std::size_t count() const noexcept;
  void zero_grad();

 private:
  std::vector<Parameter<T>> entries_;
};

// Fully connected layer on a single vector: y = act(x W + b).
template <typename T>
class Dense {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> output;  // post-activation
  };

  Dense(std::string name, std::size_t in, std::size_t out, Activation act);

  void initialize(SeededRng& rng);

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }
  Activation activation_kind() const noexcept { return act_; }
  const std::string& name() const noexcept { return name_; }

  Tensor<T> preactivation(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;

  // Gradient w.r.t. the layer output; parameter gradients go to `grads` when non-null.
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const;
  // Same, starting from the gradient w.r.t. the pre-activation (softmax+CE path).
  Tensor<T> backward_preactivation(const Cache& cache, const Tensor<T>& d_pre, LayerParams<T>* grads) const;

  LayerParams<T> params;

 private:
  std::string name_;
  std::size_t in_, out_;
  Activation act_;
};

// 2-D convolution layer on one [H,W,Cin] map with an optional ReLU.
template <typename T>
class Conv2D {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> output;
  };

  Conv2D(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel,
         std::size_t stride, Padding padding, Activation act);

  void initialize(SeededRng& rng);

  Shape output_shape(const Shape& input) const;
  const std::string& name() const noexcept { return name_; }
  std::size_t filters() const noexcept { return filters_; }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const;

  LayerParams<T> params;

 private:
  std::string name_;
  std::size_t in_, filters_, kernel_, stride_;
  Padding padding_;
  Activation act_;
};

// Standard LSTM over a [T,Din] sequence, zero initial state, returns h_T.
// Gate order in the fused kernel/bias is input, forget, candidate, output.
// The kernel acts on the concatenation [x_t, h_{t-1}].
template <typename T>
class Lstm {
 public:
  struct Step {
    Tensor<T> z;      // [Din+units]
    Tensor<T> gates;  // [4*units], post-activation
    Tensor<T> c_prev, c, tanh_c;
  };
  struct Cache {
    std::vector<Step> steps;
  };

  Lstm(std::string name, std::size_t input_dim, std::size_t units);

  void initialize(SeededRng& rng);

  const std::string& name() const noexcept { return name_; }
  std::size_t units() const noexcept { return units_; }
  std::size_t input_dim() const noexcept { return in_; }

  Tensor<T> forward(const Tensor<T>& sequence, Cache* cache = nullptr) const;
  // Returns the gradient w.r.t. the input sequence [T,Din].
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_hidden, LayerParams<T>* grads) const;

  LayerParams<T> params;

 private:
  std::string name_;
  std::size_t in_, units_;
};

// Convolutional LSTM over a [T,H,W,Cin] frame sequence with "same" padding,
// stride 1 and zero initial state; returns the final hidden map [H,W,F].
// All four gates come from one convolution over [x_t, h_{t-1}] channels.
template <typename T>
class ConvLstm2D {
 public:
  struct Step {
    Tensor<T> stacked;  // [H,W,Cin+F]
    Tensor<T> gates;    // [H,W,4F], post-activation
    Tensor<T> c_prev, c, tanh_c;
  };
  struct Cache {
    std::vector<Step> steps;
  };

  ConvLstm2D(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel);

  void initialize(SeededRng& rng);

  const std::string& name() const noexcept { return name_; }
  std::size_t filters() const noexcept { return filters_; }
  Shape output_shape(const Shape& sequence) const;

  Tensor<T> forward(const Tensor<T>& sequence, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_hidden, LayerParams<T>* grads) const;

  LayerParams<T> params;

 private:
  std::string name_;
  std::size_t in_, filters_, kernel_;
};

}  // namespace capslstm
