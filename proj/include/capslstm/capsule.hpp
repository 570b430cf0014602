#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "capslstm/layers.hpp"
#include "capslstm/tensor.hpp"

namespace capslstm {

// Guards the zero vector in the squash denominator.
inline constexpr double kSquashEpsilon = 1e-7;

// v = |s|^2 / (1 + |s|^2) * s / (|s| + eps), applied along the last axis.
template <typename T>
Tensor<T> squash(const Tensor<T>& s);

// Vector-Jacobian product of squash at input `s`.
template <typename T>
Tensor<T> squash_backward(const Tensor<T>& s, const Tensor<T>& d_v);

// A set of capsule activity vectors, poses [count, dim].
template <typename T>
struct CapsuleBank {
  Tensor<T> poses;
  std::size_t count() const { return poses.extent(0); }
  std::size_t dim() const { return poses.extent(1); }
};

// Per-iteration routing trace. Entry t of each vector belongs to iteration t:
// logits[t] are the b used to form couplings[t] = softmax(logits[t]) over the
// output axis; pre_squash[t] / outputs[t] are s_j and v_j of that iteration.
template <typename T>
struct RoutingState {
  std::size_t iterations = 0;
  std::vector<Tensor<T>> logits;      // [Nin, Nout]
  std::vector<Tensor<T>> couplings;   // [Nin, Nout]
  std::vector<Tensor<T>> pre_squash;  // [Nout, Dout]
  std::vector<Tensor<T>> outputs;     // [Nout, Dout]
};

template <typename T>
struct RoutingResult {
  Tensor<T> output;  // [Nout, Dout]
  RoutingState<T> state;
};

// Dynamic routing-by-agreement over predictions u_hat [Nin, Nout, Dout].
// Logits start at zero and the agreement update is skipped after the last
// iteration. Sums over input capsules are taken in a canonical (sorted)
// order, so permuting the input capsules leaves the output bitwise unchanged.
template <typename T>
RoutingResult<T> routing_by_agreement(const Tensor<T>& u_hat, std::size_t iterations);

// Gradient w.r.t. u_hat through every unrolled iteration (no stop-gradient).
template <typename T>
Tensor<T> routing_backward(const Tensor<T>& u_hat, const RoutingState<T>& state, const Tensor<T>& d_output);

// Conv -> reshape to (H*W*C/D, D) -> squash. Consecutive channel groups of one
// spatial cell form one capsule.
template <typename T>
class PrimaryCaps {
 public:
  struct Cache {
    typename Conv2D<T>::Cache conv;
    Tensor<T> pre_squash;  // [N, D]
  };

  PrimaryCaps(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kernel,
              std::size_t stride, std::size_t capsule_dim);

  void initialize(SeededRng& rng) { conv_.initialize(rng); }

  const std::string& name() const noexcept { return conv_.name(); }
  std::size_t capsule_dim() const noexcept { return dim_; }
  Shape conv_output_shape(const Shape& features) const { return conv_.output_shape(features); }
  Shape output_shape(const Shape& features) const;

  CapsuleBank<T> forward(const Tensor<T>& features, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_poses, LayerParams<T>* grads) const;

  LayerParams<T>& params() noexcept { return conv_.params; }
  const LayerParams<T>& params() const noexcept { return conv_.params; }

 private:
  Conv2D<T> conv_;
  std::size_t dim_;
};

// Fully connected capsule transform u_hat_ij = W_ij u_i (no bias) followed by
// routing-by-agreement. W has shape [Nin, Nout, Dout, Din].
template <typename T>
class CapsuleLayer {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> u_hat;
    RoutingState<T> routing;
  };

  CapsuleLayer(std::string name, std::size_t in_capsules, std::size_t in_dim, std::size_t out_capsules,
               std::size_t out_dim, std::size_t iterations);

  void initialize(SeededRng& rng);

  const std::string& name() const noexcept { return name_; }
  std::size_t iterations() const noexcept { return iterations_; }
  Shape output_shape() const { return {nout_, dout_}; }

  Tensor<T> predictions(const Tensor<T>& input) const;
  CapsuleBank<T> forward(const CapsuleBank<T>& input, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& d_output, LayerParams<T>* grads) const;

  LayerParams<T> params;

 private:
  std::string name_;
  std::size_t nin_, din_, nout_, dout_, iterations_;
};

}  // namespace capslstm
