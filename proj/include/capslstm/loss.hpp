#pragma once

#include "capslstm/tensor.hpp"

namespace capslstm {

// Guard inside the log of the cross-entropy.
inline constexpr double kCrossEntropyEpsilon = 1e-12;

template <typename T>
struct CrossEntropy {
  T loss;
  Tensor<T> grad_logits;  // (probs - onehot) / B, the fused softmax + CE gradient
};

// probs, onehot: [B, C]. loss = -(1/B) * sum log(p_true + eps).
template <typename T>
CrossEntropy<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot);

}  // namespace capslstm
