#include "capslstm/layers.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace capslstm {

template <typename T>
Parameter<T>& LayerParams<T>::add(std::string name, Tensor<T> value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ArgumentError("duplicate parameter name '" + name + "'");
  }
  Tensor<T> grad(value.shape());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.back();
}

template <typename T>
Parameter<T>& LayerParams<T>::get(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw ArgumentError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& LayerParams<T>::get(std::string_view name) const {
  return const_cast<LayerParams*>(this)->get(name);
}

template <typename T>
std::size_t LayerParams<T>::count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
void LayerParams<T>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(T{});
}

namespace {

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// One LSTM cell update at `positions` independent sites. `pre` holds the 4U
// gate pre-activations per site; writes activated gates, c, tanh(c) and h.
template <typename T>
void lstm_cell(std::size_t positions, std::size_t units, const T* pre, const T* c_prev, T* gates, T* c,
               T* tanh_c, T* h) {
  for (std::size_t p = 0; p < positions; ++p) {
    const T* z = pre + p * 4 * units;
    T* g = gates + p * 4 * units;
    for (std::size_t u = 0; u < units; ++u) {
      const T i = sigmoid(z[u]);
      const T f = sigmoid(z[units + u]);
      const T cand = std::tanh(z[2 * units + u]);
      const T o = sigmoid(z[3 * units + u]);
      g[u] = i;
      g[units + u] = f;
      g[2 * units + u] = cand;
      g[3 * units + u] = o;
      const std::size_t k = p * units + u;
      c[k] = f * c_prev[k] + i * cand;
      tanh_c[k] = std::tanh(c[k]);
      h[k] = o * tanh_c[k];
    }
  }
}

// Backward of lstm_cell. On entry `dc` holds the gradient flowing into c from
// the next step; on exit it holds the gradient w.r.t. c_prev.
template <typename T>
void lstm_cell_backward(std::size_t positions, std::size_t units, const T* gates, const T* c_prev,
                        const T* tanh_c, const T* dh, T* dc, T* d_pre) {
  for (std::size_t p = 0; p < positions; ++p) {
    const T* g = gates + p * 4 * units;
    T* dz = d_pre + p * 4 * units;
    for (std::size_t u = 0; u < units; ++u) {
      const std::size_t k = p * units + u;
      const T i = g[u], f = g[units + u], cand = g[2 * units + u], o = g[3 * units + u];
      const T dct = dc[k] + dh[k] * o * (T{1} - tanh_c[k] * tanh_c[k]);
      dz[u] = dct * cand * i * (T{1} - i);
      dz[units + u] = dct * c_prev[k] * f * (T{1} - f);
      dz[2 * units + u] = dct * i * (T{1} - cand * cand);
      dz[3 * units + u] = dh[k] * tanh_c[k] * o * (T{1} - o);
      dc[k] = dct * f;
    }
  }
}

// Gate biases: forget gate starts at 1, everything else at 0.
template <typename T>
Tensor<T> lstm_bias(std::size_t units) {
  Tensor<T> b({4 * units});
  for (std::size_t u = 0; u < units; ++u) b[units + u] = T{1};
  return b;
}

}  // namespace

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::string name, std::size_t in, std::size_t out, Activation act)
    : name_(std::move(name)), in_(in), out_(out), act_(act) {
  params.add("kernel", Tensor<T>({in, out}));
  params.add("bias", Tensor<T>({out}));
}

template <typename T>
void Dense<T>::initialize(SeededRng& rng) {
  glorot_uniform(params.get("kernel").value, in_, out_, rng);
  params.get("bias").value.fill(T{});
}

template <typename T>
Tensor<T> Dense<T>::preactivation(const Tensor<T>& x) const {
  if (x.size() != in_) {
    throw DimensionError(name_ + ": expected " + std::to_string(in_) + " inputs, got " +
                         shape_string(x.shape()));
  }
  Tensor<T> y = params.get("bias").value;
  detail::gemm_nn(1, out_, in_, x.ptr(), params.get("kernel").value.ptr(), y.ptr());
  return y;
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> y = activation(preactivation(x), act_);
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const {
  return backward_preactivation(cache, activation_backward(cache.output, d_output, act_), grads);
}

template <typename T>
Tensor<T> Dense<T>::backward_preactivation(const Cache& cache, const Tensor<T>& d_pre,
                                           LayerParams<T>* grads) const {
  if (d_pre.size() != out_) {
    throw DimensionError(name_ + ": upstream gradient has " + std::to_string(d_pre.size()) +
                         " values, expected " + std::to_string(out_));
  }
  const Tensor<T>& w = params.get("kernel").value;
  if (grads) {
    detail::gemm_tn(1, out_, in_, cache.input.ptr(), d_pre.ptr(), grads->get("kernel").grad.ptr());
    auto& db = grads->get("bias").grad;
    for (std::size_t j = 0; j < out_; ++j) db[j] += d_pre[j];
  }
  Tensor<T> dx(cache.input.shape());
  for (std::size_t i = 0; i < in_; ++i) {
    T acc{};
    const T* row = w.ptr() + i * out_;
    for (std::size_t j = 0; j < out_; ++j) acc += row[j] * d_pre[j];
    dx[i] = acc;
  }
  return dx;
}

// ---------------------------------------------------------------- Conv2D

template <typename T>
Conv2D<T>::Conv2D(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel,
                  std::size_t stride, Padding padding, Activation act)
    : name_(std::move(name)),
      in_(in_channels),
      filters_(filters),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      act_(act) {
  if (act != Activation::None && act != Activation::Relu) {
    throw ArgumentError("conv2d activation must be relu or none");
  }
  if (stride == 0) throw ArgumentError(name_ + ": stride must be positive");
  params.add("kernel", Tensor<T>({kernel, kernel, in_channels, filters}));
  params.add("bias", Tensor<T>({filters}));
}

template <typename T>
void Conv2D<T>::initialize(SeededRng& rng) {
  glorot_uniform(params.get("kernel").value, kernel_ * kernel_ * in_, kernel_ * kernel_ * filters_, rng);
  params.get("bias").value.fill(T{});
}

template <typename T>
Shape Conv2D<T>::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[2] != in_) {
    throw DimensionError(name_ + ": expected [H,W," + std::to_string(in_) + "] input, got " +
                         shape_string(input));
  }
  return {conv_output_extent(input[0], kernel_, stride_, padding_),
          conv_output_extent(input[1], kernel_, stride_, padding_), filters_};
}

template <typename T>
Tensor<T> Conv2D<T>::forward(const Tensor<T>& x, Cache* cache) const {
  output_shape(x.shape());
  Tensor<T> y = activation(
      conv2d_forward(x, params.get("kernel").value, params.get("bias").value, stride_, padding_), act_);
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2D<T>::backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const {
  const Tensor<T> d_pre = activation_backward(cache.output, d_output, act_);
  Conv2dGrads<T> g = conv2d_backward(cache.input, params.get("kernel").value, d_pre, stride_, padding_);
  if (grads) {
    grads->get("kernel").grad += g.kernels;
    grads->get("bias").grad += g.bias;
  }
  return std::move(g.input);
}

// ---------------------------------------------------------------- Lstm

template <typename T>
Lstm<T>::Lstm(std::string name, std::size_t input_dim, std::size_t units)
    : name_(std::move(name)), in_(input_dim), units_(units) {
  params.add("kernel", Tensor<T>({input_dim + units, 4 * units}));
  params.add("bias", lstm_bias<T>(units));
}

template <typename T>
void Lstm<T>::initialize(SeededRng& rng) {
  glorot_uniform(params.get("kernel").value, in_ + units_, 4 * units_, rng);
  params.get("bias").value = lstm_bias<T>(units_);
}

template <typename T>
Tensor<T> Lstm<T>::forward(const Tensor<T>& sequence, Cache* cache) const {
  if (sequence.rank() != 2 || sequence.extent(1) != in_) {
    throw DimensionError(name_ + ": expected [T," + std::to_string(in_) + "] sequence, got " +
                         shape_string(sequence.shape()));
  }
  const std::size_t steps = sequence.extent(0);
  const Tensor<T>& w = params.get("kernel").value;
  const Tensor<T>& b = params.get("bias").value;
  Tensor<T> h({units_});
  Tensor<T> c({units_});
  if (cache) cache->steps.clear();
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<T> z({in_ + units_});
    std::copy_n(sequence.ptr() + t * in_, in_, z.ptr());
    std::copy_n(h.ptr(), units_, z.ptr() + in_);
    Tensor<T> pre = b;
    detail::gemm_nn(1, 4 * units_, in_ + units_, z.ptr(), w.ptr(), pre.ptr());
    Step step{std::move(z), Tensor<T>({4 * units_}), c, Tensor<T>({units_}), Tensor<T>({units_})};
    lstm_cell(1, units_, pre.ptr(), step.c_prev.ptr(), step.gates.ptr(), step.c.ptr(), step.tanh_c.ptr(),
              h.ptr());
    c = step.c;
    if (cache) cache->steps.push_back(std::move(step));
  }
  return h;
}

template <typename T>
Tensor<T> Lstm<T>::backward(const Cache& cache, const Tensor<T>& d_hidden, LayerParams<T>* grads) const {
  if (d_hidden.size() != units_) {
    throw DimensionError(name_ + ": upstream gradient must have " + std::to_string(units_) + " values");
  }
  const std::size_t steps = cache.steps.size();
  const std::size_t zdim = in_ + units_;
  const Tensor<T>& w = params.get("kernel").value;
  Tensor<T> d_seq({steps, in_});
  Tensor<T> dh = d_hidden;
  Tensor<T> dc({units_});
  Tensor<T> d_pre({4 * units_});
  for (std::size_t t = steps; t-- > 0;) {
    const Step& s = cache.steps[t];
    lstm_cell_backward(1, units_, s.gates.ptr(), s.c_prev.ptr(), s.tanh_c.ptr(), dh.ptr(), dc.ptr(),
                       d_pre.ptr());
    if (grads) {
      detail::gemm_tn(1, 4 * units_, zdim, s.z.ptr(), d_pre.ptr(), grads->get("kernel").grad.ptr());
      grads->get("bias").grad += d_pre;
    }
    for (std::size_t r = 0; r < zdim; ++r) {
      const T* row = w.ptr() + r * 4 * units_;
      T acc{};
      for (std::size_t j = 0; j < 4 * units_; ++j) acc += row[j] * d_pre[j];
      if (r < in_) {
        d_seq[t * in_ + r] = acc;
      } else {
        dh[r - in_] = acc;
      }
    }
  }
  return d_seq;
}

// ---------------------------------------------------------------- ConvLstm2D

template <typename T>
ConvLstm2D<T>::ConvLstm2D(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel)
    : name_(std::move(name)), in_(in_channels), filters_(filters), kernel_(kernel) {
  params.add("kernel", Tensor<T>({kernel, kernel, in_channels + filters, 4 * filters}));
  params.add("bias", lstm_bias<T>(filters));
}

template <typename T>
void ConvLstm2D<T>::initialize(SeededRng& rng) {
  glorot_uniform(params.get("kernel").value, kernel_ * kernel_ * (in_ + filters_),
                 kernel_ * kernel_ * 4 * filters_, rng);
  params.get("bias").value = lstm_bias<T>(filters_);
}

template <typename T>
Shape ConvLstm2D<T>::output_shape(const Shape& sequence) const {
  if (sequence.size() != 4 || sequence[3] != in_) {
    throw DimensionError(name_ + ": expected [T,H,W," + std::to_string(in_) + "] sequence, got " +
                         shape_string(sequence));
  }
  // Same padding keeps the frame size; the kernel still has to fit the padded frame.
  for (std::size_t axis : {1u, 2u}) {
    const PadSpec pad = conv_padding(sequence[axis], kernel_, 1, Padding::Same);
    if (kernel_ > sequence[axis] + pad.before + pad.after) {
      throw DimensionError(name_ + ": kernel larger than padded frame");
    }
  }
  return {sequence[1], sequence[2], filters_};
}

template <typename T>
Tensor<T> ConvLstm2D<T>::forward(const Tensor<T>& sequence, Cache* cache) const {
  const Shape out_shape = output_shape(sequence.shape());
  const std::size_t steps = sequence.extent(0);
  const std::size_t hw = out_shape[0] * out_shape[1];
  const std::size_t width = in_ + filters_;
  const Tensor<T>& w = params.get("kernel").value;
  const Tensor<T>& b = params.get("bias").value;
  Tensor<T> h(out_shape);
  Tensor<T> c(out_shape);
  if (cache) cache->steps.clear();
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<T> stacked({out_shape[0], out_shape[1], width});
    const T* x = sequence.ptr() + t * hw * in_;
    for (std::size_t p = 0; p < hw; ++p) {
      std::copy_n(x + p * in_, in_, stacked.ptr() + p * width);
      std::copy_n(h.ptr() + p * filters_, filters_, stacked.ptr() + p * width + in_);
    }
    const Tensor<T> pre = conv2d_forward(stacked, w, b, 1, Padding::Same);
    Step step{std::move(stacked), Tensor<T>(pre.shape()), c, Tensor<T>(out_shape), Tensor<T>(out_shape)};
    lstm_cell(hw, filters_, pre.ptr(), step.c_prev.ptr(), step.gates.ptr(), step.c.ptr(), step.tanh_c.ptr(),
              h.ptr());
    c = step.c;
    if (cache) cache->steps.push_back(std::move(step));
  }
  return h;
}

template <typename T>
Tensor<T> ConvLstm2D<T>::backward(const Cache& cache, const Tensor<T>& d_hidden, LayerParams<T>* grads) const {
  if (cache.steps.empty()) throw ArgumentError(name_ + ": backward without a forward cache");
  const Shape& map_shape = cache.steps.front().c.shape();
  if (d_hidden.shape() != map_shape) {
    throw DimensionError(name_ + ": upstream gradient must be " + shape_string(map_shape));
  }
  const std::size_t steps = cache.steps.size();
  const std::size_t hw = map_shape[0] * map_shape[1];
  const std::size_t width = in_ + filters_;
  const Tensor<T>& w = params.get("kernel").value;
  Tensor<T> d_seq({steps, map_shape[0], map_shape[1], in_});
  Tensor<T> dh = d_hidden;
  Tensor<T> dc(map_shape);
  Tensor<T> d_pre({map_shape[0], map_shape[1], 4 * filters_});
  for (std::size_t t = steps; t-- > 0;) {
    const Step& s = cache.steps[t];
    lstm_cell_backward(hw, filters_, s.gates.ptr(), s.c_prev.ptr(), s.tanh_c.ptr(), dh.ptr(), dc.ptr(),
                       d_pre.ptr());
    Conv2dGrads<T> g = conv2d_backward(s.stacked, w, d_pre, 1, Padding::Same);
    if (grads) {
      grads->get("kernel").grad += g.kernels;
      grads->get("bias").grad += g.bias;
    }
    T* dx = d_seq.ptr() + t * hw * in_;
    for (std::size_t p = 0; p < hw; ++p) {
      std::copy_n(g.input.ptr() + p * width, in_, dx + p * in_);
      std::copy_n(g.input.ptr() + p * width + in_, filters_, dh.ptr() + p * filters_);
    }
  }
  return d_seq;
}

template class LayerParams<float>;
template class LayerParams<double>;
template class Dense<float>;
template class Dense<double>;
template class Conv2D<float>;
template class Conv2D<double>;
template class Lstm<float>;
template class Lstm<double>;
template class ConvLstm2D<float>;
template class ConvLstm2D<double>;

}  // namespace capslstm
