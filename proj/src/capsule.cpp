#include "capslstm/capsule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace capslstm {

namespace {

// Sum whose value depends only on the multiset of terms.
template <typename T>
T canonical_sum(std::vector<T>& terms) {
  for (T v : terms) {
    if (std::isnan(v)) return std::numeric_limits<T>::quiet_NaN();
  }
  std::sort(terms.begin(), terms.end());
  T total{};
  for (T v : terms) total += v;
  return total;
}

}  // namespace

template <typename T>
Tensor<T> squash(const Tensor<T>& s) {
  if (s.rank() == 0) throw DimensionError("squash needs at least one axis");
  const std::size_t dim = s.extent(s.rank() - 1);
  const std::size_t n = s.size() / dim;
  Tensor<T> v(s.shape());
  const T eps = static_cast<T>(kSquashEpsilon);
  for (std::size_t k = 0; k < n; ++k) {
    const T* in = s.ptr() + k * dim;
    T q{};
    for (std::size_t d = 0; d < dim; ++d) q += in[d] * in[d];
    const T norm = std::sqrt(q);
    const T scale = q / ((T{1} + q) * (norm + eps));
    for (std::size_t d = 0; d < dim; ++d) v[k * dim + d] = scale * in[d];
  }
  return v;
}

template <typename T>
Tensor<T> squash_backward(const Tensor<T>& s, const Tensor<T>& d_v) {
  s.require_same_shape(d_v, "squash backward");
  const std::size_t dim = s.extent(s.rank() - 1);
  const std::size_t n = s.size() / dim;
  Tensor<T> g(s.shape());
  const T eps = static_cast<T>(kSquashEpsilon);
  for (std::size_t k = 0; k < n; ++k) {
    const T* in = s.ptr() + k * dim;
    const T* up = d_v.ptr() + k * dim;
    T q{}, dot{};
    for (std::size_t d = 0; d < dim; ++d) {
      q += in[d] * in[d];
      dot += in[d] * up[d];
    }
    const T norm = std::sqrt(q);
    const T denom = (T{1} + q) * (norm + eps);
    const T scale = q / denom;
    // d scale / d q, written without dividing by the norm.
    const T dscale = ((norm + eps) - norm * (T{1} + q) / T{2}) / (denom * denom);
    for (std::size_t d = 0; d < dim; ++d) g[k * dim + d] = scale * up[d] + T{2} * dscale * dot * in[d];
  }
  return g;
}

template <typename T>
RoutingResult<T> routing_by_agreement(const Tensor<T>& u_hat, std::size_t iterations) {
  if (iterations == 0) throw ArgumentError("routing needs at least one iteration");
  if (u_hat.rank() != 3) {
    throw DimensionError("routing predictions must be [Nin,Nout,Dout], got " + shape_string(u_hat.shape()));
  }
  const std::size_t nin = u_hat.extent(0), nout = u_hat.extent(1), dout = u_hat.extent(2);
  RoutingResult<T> result;
  RoutingState<T>& st = result.state;
  st.iterations = iterations;
  Tensor<T> b({nin, nout});
  std::vector<T> terms(nin);
  for (std::size_t t = 0; t < iterations; ++t) {
    Tensor<T> c = softmax_axis(b, 1);
    Tensor<T> s({nout, dout});
    for (std::size_t j = 0; j < nout; ++j) {
      for (std::size_t d = 0; d < dout; ++d) {
        for (std::size_t i = 0; i < nin; ++i) terms[i] = c[i * nout + j] * u_hat[(i * nout + j) * dout + d];
        s[j * dout + d] = canonical_sum(terms);
      }
    }
    Tensor<T> v = squash(s);
    st.logits.push_back(b);
    st.couplings.push_back(std::move(c));
    if (t + 1 < iterations) {
      for (std::size_t i = 0; i < nin; ++i) {
        for (std::size_t j = 0; j < nout; ++j) {
          const T* u = u_hat.ptr() + (i * nout + j) * dout;
          T agree{};
          for (std::size_t d = 0; d < dout; ++d) agree += u[d] * v[j * dout + d];
          b[i * nout + j] += agree;
        }
      }
    }
    st.pre_squash.push_back(std::move(s));
    st.outputs.push_back(std::move(v));
  }
  result.output = st.outputs.back();
  return result;
}

template <typename T>
Tensor<T> routing_backward(const Tensor<T>& u_hat, const RoutingState<T>& state, const Tensor<T>& d_output) {
  const std::size_t nin = u_hat.extent(0), nout = u_hat.extent(1), dout = u_hat.extent(2);
  if (state.outputs.size() != state.iterations || state.iterations == 0) {
    throw ArgumentError("routing backward needs a complete routing state");
  }
  d_output.require_same_shape(state.outputs.back(), "routing backward");
  Tensor<T> gu(u_hat.shape());
  Tensor<T> gb({nin, nout});  // gradient w.r.t. the logits of iteration t+1
  for (std::size_t t = state.iterations; t-- > 0;) {
    const Tensor<T>& c = state.couplings[t];
    const Tensor<T>& v = state.outputs[t];
    Tensor<T> gv = (t + 1 == state.iterations) ? d_output : Tensor<T>({nout, dout});
    if (t + 1 < state.iterations) {
      for (std::size_t i = 0; i < nin; ++i) {
        for (std::size_t j = 0; j < nout; ++j) {
          const T g = gb[i * nout + j];
          const std::size_t base = (i * nout + j) * dout;
          for (std::size_t d = 0; d < dout; ++d) {
            gv[j * dout + d] += g * u_hat[base + d];
            gu[base + d] += g * v[j * dout + d];
          }
        }
      }
    }
    const Tensor<T> gs = squash_backward(state.pre_squash[t], gv);
    Tensor<T> gc({nin, nout});
    for (std::size_t i = 0; i < nin; ++i) {
      for (std::size_t j = 0; j < nout; ++j) {
        const std::size_t base = (i * nout + j) * dout;
        const T cij = c[i * nout + j];
        T acc{};
        for (std::size_t d = 0; d < dout; ++d) {
          acc += u_hat[base + d] * gs[j * dout + d];
          gu[base + d] += cij * gs[j * dout + d];
        }
        gc[i * nout + j] = acc;
      }
    }
    gb += softmax_axis_backward(c, gc, 1);
  }
  return gu;
}

// ---------------------------------------------------------------- PrimaryCaps

template <typename T>
PrimaryCaps<T>::PrimaryCaps(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t stride, std::size_t capsule_dim)
    : conv_(std::move(name), in_channels, filters, kernel, stride, Padding::Valid, Activation::None),
      dim_(capsule_dim) {
  if (capsule_dim == 0 || filters % capsule_dim != 0) {
    throw ArgumentError("primary capsule channels (" + std::to_string(filters) +
                        ") not divisible by capsule dimension " + std::to_string(capsule_dim));
  }
}

template <typename T>
Shape PrimaryCaps<T>::output_shape(const Shape& features) const {
  const Shape conv = conv_.output_shape(features);
  return {shape_size(conv) / dim_, dim_};
}

template <typename T>
CapsuleBank<T> PrimaryCaps<T>::forward(const Tensor<T>& features, Cache* cache) const {
  typename Conv2D<T>::Cache conv_cache;
  Tensor<T> s = conv_.forward(features, &conv_cache);
  s.reshape({s.size() / dim_, dim_});
  CapsuleBank<T> bank{squash(s)};
  if (cache) {
    cache->conv = std::move(conv_cache);
    cache->pre_squash = std::move(s);
  }
  return bank;
}

template <typename T>
Tensor<T> PrimaryCaps<T>::backward(const Cache& cache, const Tensor<T>& d_poses, LayerParams<T>* grads) const {
  Tensor<T> d_conv = squash_backward(cache.pre_squash, d_poses);
  d_conv.reshape(cache.conv.output.shape());
  return conv_.backward(cache.conv, d_conv, grads);
}

// ---------------------------------------------------------------- CapsuleLayer

template <typename T>
CapsuleLayer<T>::CapsuleLayer(std::string name, std::size_t in_capsules, std::size_t in_dim,
                              std::size_t out_capsules, std::size_t out_dim, std::size_t iterations)
    : name_(std::move(name)),
      nin_(in_capsules),
      din_(in_dim),
      nout_(out_capsules),
      dout_(out_dim),
      iterations_(iterations) {
  if (iterations == 0) throw ArgumentError(name_ + ": routing needs at least one iteration");
  params.add("W", Tensor<T>({in_capsules, out_capsules, out_dim, in_dim}));
}

template <typename T>
void CapsuleLayer<T>::initialize(SeededRng& rng) {
  glorot_uniform(params.get("W").value, din_, dout_, rng);
}

template <typename T>
Tensor<T> CapsuleLayer<T>::predictions(const Tensor<T>& input) const {
  if (input.shape() != Shape{nin_, din_}) {
    throw DimensionError(name_ + ": expected capsules " + shape_string({nin_, din_}) + ", got " +
                         shape_string(input.shape()));
  }
  const Tensor<T>& w = params.get("W").value;
  Tensor<T> u_hat({nin_, nout_, dout_});
  for (std::size_t i = 0; i < nin_; ++i) {
    const T* u = input.ptr() + i * din_;
    for (std::size_t j = 0; j < nout_; ++j) {
      const T* wij = w.ptr() + (i * nout_ + j) * dout_ * din_;
      T* out = u_hat.ptr() + (i * nout_ + j) * dout_;
      for (std::size_t o = 0; o < dout_; ++o) {
        T acc{};
        for (std::size_t d = 0; d < din_; ++d) acc += wij[o * din_ + d] * u[d];
        out[o] = acc;
      }
    }
  }
  return u_hat;
}

template <typename T>
CapsuleBank<T> CapsuleLayer<T>::forward(const CapsuleBank<T>& input, Cache* cache) const {
  Tensor<T> u_hat = predictions(input.poses);
  RoutingResult<T> routed = routing_by_agreement(u_hat, iterations_);
  CapsuleBank<T> out{std::move(routed.output)};
  if (cache) {
    cache->input = input.poses;
    cache->u_hat = std::move(u_hat);
    cache->routing = std::move(routed.state);
  }
  return out;
}

template <typename T>
Tensor<T> CapsuleLayer<T>::backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const {
  const Tensor<T> gu_hat = routing_backward(cache.u_hat, cache.routing, d_output);
  const Tensor<T>& w = params.get("W").value;
  Tensor<T> d_input({nin_, din_});
  T* gw = grads ? grads->get("W").grad.ptr() : nullptr;
  for (std::size_t i = 0; i < nin_; ++i) {
    const T* u = cache.input.ptr() + i * din_;
    T* du = d_input.ptr() + i * din_;
    for (std::size_t j = 0; j < nout_; ++j) {
      const std::size_t pair = i * nout_ + j;
      const T* g = gu_hat.ptr() + pair * dout_;
      const T* wij = w.ptr() + pair * dout_ * din_;
      for (std::size_t o = 0; o < dout_; ++o) {
        for (std::size_t d = 0; d < din_; ++d) {
          du[d] += wij[o * din_ + d] * g[o];
          if (gw) gw[pair * dout_ * din_ + o * din_ + d] += g[o] * u[d];
        }
      }
    }
  }
  return d_input;
}

#define CAPSLSTM_INSTANTIATE(T)                                                                       \
  template Tensor<T> squash(const Tensor<T>&);                                                         \
  template Tensor<T> squash_backward(const Tensor<T>&, const Tensor<T>&);                              \
  template RoutingResult<T> routing_by_agreement(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> routing_backward(const Tensor<T>&, const RoutingState<T>&, const Tensor<T>&);     \
  template class PrimaryCaps<T>;                                                                       \
  template class CapsuleLayer<T>;

CAPSLSTM_INSTANTIATE(float)
CAPSLSTM_INSTANTIATE(double)

}  // namespace capslstm
