#include "capslstm/loss.hpp"

#include <cmath>
#include <string>

namespace capslstm {

template <typename T>
CrossEntropy<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot) {
  if (probs.rank() != 2) {
    throw DimensionError("cross-entropy expects probabilities [B,C], got " + shape_string(probs.shape()));
  }
  probs.require_same_shape(onehot, "cross-entropy labels");
  const std::size_t batch = probs.extent(0), classes = probs.extent(1);
  CrossEntropy<T> out{T{}, Tensor<T>(probs.shape())};
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double row = 0.0;
    for (std::size_t c = 0; c < classes; ++c) row += static_cast<double>(probs[b * classes + c]);
    if (std::abs(row - 1.0) > 1e-5) {
      throw ArgumentError("cross-entropy row " + std::to_string(b) + " sums to " + std::to_string(row));
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t k = b * classes + c;
      total -= static_cast<double>(onehot[k]) * std::log(static_cast<double>(probs[k]) + kCrossEntropyEpsilon);
      out.grad_logits[k] = (probs[k] - onehot[k]) / static_cast<T>(batch);
    }
  }
  out.loss = static_cast<T>(total / static_cast<double>(batch));
  return out;
}

template CrossEntropy<float> categorical_cross_entropy(const Tensor<float>&, const Tensor<float>&);
template CrossEntropy<double> categorical_cross_entropy(const Tensor<double>&, const Tensor<double>&);

}  // namespace capslstm
