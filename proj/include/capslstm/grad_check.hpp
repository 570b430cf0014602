#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "capslstm/tensor.hpp"

namespace capslstm {

using ScalarFunction = std::function<double(const Tensor<double>&)>;
using GradientFunction = std::function<Tensor<double>(const Tensor<double>&)>;

// Compares `gradient(point)` against central differences of `fn`, one
// coordinate at a time, and returns the largest relative error
// |a - n| / max(|a|, |n|, 1e-8). When `coordinates` is non-empty only those
// flat indices are probed. Throws NumericError on a non-finite evaluation.
double grad_check(const ScalarFunction& fn, const GradientFunction& gradient, const Tensor<double>& point,
                  double eps = 1e-5, std::span<const std::size_t> coordinates = {});

}  // namespace capslstm
