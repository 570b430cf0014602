#include "capslstm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace capslstm {

namespace {

double checked(double v, const char* where, std::size_t coordinate) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("grad_check: non-finite function value at ") + where + " (coordinate " +
                       std::to_string(coordinate) + ")");
  }
  return v;
}

}  // namespace

double grad_check(const ScalarFunction& fn, const GradientFunction& gradient, const Tensor<double>& point,
                  double eps, std::span<const std::size_t> coordinates) {
  if (!(eps > 0.0)) throw ArgumentError("grad_check eps must be positive");
  for (double v : point.data()) {
    if (!std::isfinite(v)) throw NumericError("grad_check: point is not finite");
  }
  checked(fn(point), "the base point", 0);
  const Tensor<double> analytic = gradient(point);
  point.require_same_shape(analytic, "grad_check analytic gradient");

  std::vector<std::size_t> all;
  if (coordinates.empty()) {
    all.resize(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coordinates = all;
  }

  Tensor<double> probe = point;
  double worst = 0.0;
  for (std::size_t i : coordinates) {
    if (i >= point.size()) throw ArgumentError("grad_check coordinate out of range");
    const double x = point[i];
    probe[i] = x + eps;
    const double up = checked(fn(probe), "x+eps", i);
    probe[i] = x - eps;
    const double down = checked(fn(probe), "x-eps", i);
    probe[i] = x;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace capslstm
