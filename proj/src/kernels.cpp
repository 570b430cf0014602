#include "capslstm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace capslstm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0) throw ArgumentError("convolution stride must be positive");
  if (kernel == 0) throw ArgumentError("convolution kernel extent must be positive");
  if (padding == Padding::Same) return (in + stride - 1) / stride;
  if (kernel > in) {
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds input extent " +
                         std::to_string(in) + " under valid padding");
  }
  return (in - kernel) / stride + 1;
}

PadSpec conv_padding(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (padding == Padding::Valid) return {};
  const std::size_t out = conv_output_extent(in, kernel, stride, padding);
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > in ? needed - in : 0;
  return {total / 2, total - total / 2};
}

namespace {

// Geometry shared by the forward and backward convolution passes.
struct ConvGeometry {
  std::size_t h, w, cin, kh, kw, cout, stride;
  std::size_t ho, wo;
  PadSpec pad_y, pad_x;
  std::size_t patch() const { return kh * kw * cin; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                           Padding padding) {
  if (stride == 0) throw ArgumentError("convolution stride must be positive");
  if (input.rank() != 3) {
    throw DimensionError("conv2d input must be [H,W,Cin], got " + shape_string(input.shape()));
  }
  if (kernels.rank() != 4) {
    throw DimensionError("conv2d kernels must be [Kh,Kw,Cin,Cout], got " + shape_string(kernels.shape()));
  }
  ConvGeometry g{};
  g.h = input.extent(0);
  g.w = input.extent(1);
  g.cin = input.extent(2);
  g.kh = kernels.extent(0);
  g.kw = kernels.extent(1);
  g.cout = kernels.extent(3);
  g.stride = stride;
  if (kernels.extent(2) != g.cin) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(g.cin) +
                         " channels, kernels expect " + std::to_string(kernels.extent(2)));
  }
  g.pad_y = conv_padding(g.h, g.kh, stride, padding);
  g.pad_x = conv_padding(g.w, g.kw, stride, padding);
  if (g.kh > g.h + g.pad_y.before + g.pad_y.after || g.kw > g.w + g.pad_x.before + g.pad_x.after) {
    throw DimensionError("kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + shape_string(input.shape()));
  }
  g.ho = conv_output_extent(g.h, g.kh, stride, padding);
  g.wo = conv_output_extent(g.w, g.kw, stride, padding);
  return g;
}

// Output rows per im2col chunk, bounded so the patch matrix stays ~16 MiB.
std::size_t chunk_rows(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  const std::size_t per_row = g.wo * g.patch();
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_row, 1), 1, g.ho);
}

// Fills patches [(oy1-oy0)*Wo, Kh*Kw*Cin] for output rows [oy0, oy1).
template <typename T>
void im2col(const ConvGeometry& g, const T* in, std::size_t oy0, std::size_t oy1, T* patches) {
  const std::size_t row_len = g.kw * g.cin;
  T* dst = patches;
  for (std::size_t oy = oy0; oy < oy1; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const auto x0 = static_cast<std::ptrdiff_t>(ox * g.stride) - static_cast<std::ptrdiff_t>(g.pad_x.before);
      const bool x_inside = x0 >= 0 && x0 + static_cast<std::ptrdiff_t>(g.kw) <= static_cast<std::ptrdiff_t>(g.w);
      for (std::size_t ky = 0; ky < g.kh; ++ky, dst += row_len) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_y.before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
          std::fill(dst, dst + row_len, T{});
          continue;
        }
        const T* src_row = in + static_cast<std::size_t>(iy) * g.w * g.cin;
        if (x_inside) {
          std::copy(src_row + static_cast<std::size_t>(x0) * g.cin,
                    src_row + static_cast<std::size_t>(x0) * g.cin + row_len, dst);
          continue;
        }
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
          T* cell = dst + kx * g.cin;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(cell, cell + g.cin, T{});
          } else {
            std::copy(src_row + static_cast<std::size_t>(ix) * g.cin,
                      src_row + (static_cast<std::size_t>(ix) + 1) * g.cin, cell);
          }
        }
      }
    }
  }
}

// Scatter-adds patch gradients back onto the input gradient.
template <typename T>
void col2im(const ConvGeometry& g, const T* patches, std::size_t oy0, std::size_t oy1, T* grad_in) {
  const std::size_t row_len = g.kw * g.cin;
  const T* src = patches;
  for (std::size_t oy = oy0; oy < oy1; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const auto x0 = static_cast<std::ptrdiff_t>(ox * g.stride) - static_cast<std::ptrdiff_t>(g.pad_x.before);
      for (std::size_t ky = 0; ky < g.kh; ++ky, src += row_len) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_y.before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        T* dst_row = grad_in + static_cast<std::size_t>(iy) * g.w * g.cin;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = x0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          T* cell = dst_row + static_cast<std::size_t>(ix) * g.cin;
          const T* from = src + kx * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) cell[c] += from[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
  if (bias.rank() != 1 || bias.extent(0) != g.cout) {
    throw DimensionError("conv2d bias must be [" + std::to_string(g.cout) + "], got " +
                         shape_string(bias.shape()));
  }
  Tensor<T> out({g.ho, g.wo, g.cout});
  T* o = out.ptr();
  for (std::size_t p = 0; p < g.ho * g.wo; ++p) std::copy(bias.ptr(), bias.ptr() + g.cout, o + p * g.cout);

  const std::size_t rows = chunk_rows(g);
  std::vector<T> patches(rows * g.wo * g.patch());
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += rows) {
    const std::size_t oy1 = std::min(g.ho, oy0 + rows);
    im2col(g, input.ptr(), oy0, oy1, patches.data());
    detail::gemm_nn((oy1 - oy0) * g.wo, g.cout, g.patch(), patches.data(), kernels.ptr(),
                    o + oy0 * g.wo * g.cout);
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& upstream, std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
  const Shape expected{g.ho, g.wo, g.cout};
  if (upstream.shape() != expected) {
    throw DimensionError("conv2d upstream gradient must be " + shape_string(expected) + ", got " +
                         shape_string(upstream.shape()));
  }
  Conv2dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()), Tensor<T>({g.cout})};
  const T* up = upstream.ptr();
  for (std::size_t p = 0; p < g.ho * g.wo; ++p) {
    for (std::size_t c = 0; c < g.cout; ++c) grads.bias[c] += up[p * g.cout + c];
  }

  // kernels viewed as [K, Cout]; its transpose feeds the input gradient.
  const std::size_t k = g.patch();
  std::vector<T> kt(k * g.cout);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < g.cout; ++c) kt[c * k + r] = kernels[r * g.cout + c];
  }

  const std::size_t rows = chunk_rows(g);
  std::vector<T> patches(rows * g.wo * k);
  std::vector<T> dpatches(rows * g.wo * k);
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += rows) {
    const std::size_t oy1 = std::min(g.ho, oy0 + rows);
    const std::size_t m = (oy1 - oy0) * g.wo;
    const T* up_chunk = up + oy0 * g.wo * g.cout;
    im2col(g, input.ptr(), oy0, oy1, patches.data());
    detail::gemm_tn(m, g.cout, k, patches.data(), up_chunk, grads.kernels.ptr());
    std::fill(dpatches.begin(), dpatches.begin() + static_cast<std::ptrdiff_t>(m * k), T{});
    detail::gemm_nn(m, k, g.cout, up_chunk, kt.data(), dpatches.data());
    col2im(g, dpatches.data(), oy0, oy1, grads.input.ptr());
  }
  return grads;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul needs rank-2 operands, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  if (a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> out({a.extent(0), b.extent(1)});
  detail::gemm_nn(a.extent(0), b.extent(1), a.extent(1), a.ptr(), b.ptr(), out.ptr());
  return out;
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ArgumentError("softmax axis " + std::to_string(axis) + " out of range for rank " +
                        std::to_string(shape.size()));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < l.len; ++j) peak = std::max(peak, x[base + j * l.inner]);
      T total{};
      for (std::size_t j = 0; j < l.len; ++j) {
        const T e = std::exp(x[base + j * l.inner] - peak);
        y[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.len; ++j) y[base + j * l.inner] /= total;
    }
  }
  return y;
}

template <typename T>
Tensor<T> softmax_axis_backward(const Tensor<T>& y, const Tensor<T>& upstream, std::size_t axis) {
  y.require_same_shape(upstream, "softmax backward");
  const AxisLayout l = axis_layout(y.shape(), axis);
  Tensor<T> g(y.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T dot{};
      for (std::size_t j = 0; j < l.len; ++j) dot += y[base + j * l.inner] * upstream[base + j * l.inner];
      for (std::size_t j = 0; j < l.len; ++j) {
        const std::size_t idx = base + j * l.inner;
        g[idx] = y[idx] * (upstream[idx] - dot);
      }
    }
  }
  return g;
}

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  if (kind == Activation::Softmax) return softmax_axis(x, x.rank() == 0 ? 0 : x.rank() - 1);
  Tensor<T> y = x;
  switch (kind) {
    case Activation::Relu:
      for (auto& v : y.data()) v = v > T{} ? v : T{};
      break;
    case Activation::Sigmoid:
      for (auto& v : y.data()) v = T{1} / (T{1} + std::exp(-v));
      break;
    case Activation::Tanh:
      for (auto& v : y.data()) v = std::tanh(v);
      break;
    default:
      break;
  }
  return y;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& upstream, Activation kind) {
  y.require_same_shape(upstream, "activation backward");
  if (kind == Activation::Softmax) return softmax_axis_backward(y, upstream, y.rank() - 1);
  Tensor<T> g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) {
    switch (kind) {
      case Activation::Relu: g[i] = y[i] > T{} ? g[i] : T{}; break;
      case Activation::Sigmoid: g[i] *= y[i] * (T{1} - y[i]); break;
      case Activation::Tanh: g[i] *= T{1} - y[i] * y[i]; break;
      default: break;
    }
  }
  return g;
}

template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, SeededRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
}

#define CAPSLSTM_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                    std::size_t, Padding);                                            \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                          std::size_t, Padding);                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> softmax_axis(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> softmax_axis_backward(const Tensor<T>&, const Tensor<T>&, std::size_t);          \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                        \
  template Tensor<T> activation_backward(const Tensor<T>&, const Tensor<T>&, Activation);             \
  template void glorot_uniform(Tensor<T>&, std::size_t, std::size_t, SeededRng&);

CAPSLSTM_INSTANTIATE(float)
CAPSLSTM_INSTANTIATE(double)

}  // namespace capslstm
