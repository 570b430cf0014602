#pragma once

// Independent reference implementations. Deliberately naive: plain loops,
// no shared code with the library kernels.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "capslstm/data.hpp"
#include "capslstm/tensor.hpp"

namespace oracle {

using capslstm::Tensor;

// Direct convolution. `same` pads so that out = ceil(in / stride), extra cell after.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                             std::size_t stride, bool same) {
  const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const std::size_t kh = k.extent(0), kw = k.extent(1), cout = k.extent(3);
  std::size_t oh, ow;
  long ph = 0, pw = 0;
  if (same) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const long th = std::max<long>(0, static_cast<long>((oh - 1) * stride + kh) - static_cast<long>(h));
    const long tw = std::max<long>(0, static_cast<long>((ow - 1) * stride + kw) - static_cast<long>(w));
    ph = th / 2;
    pw = tw / 2;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
  }
  Tensor<double> y({oh, ow, cout});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = b[o];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t c = 0; c < kw; ++c) {
            const long r = static_cast<long>(i * stride + a) - ph;
            const long s = static_cast<long>(j * stride + c) - pw;
            if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += x.at({static_cast<std::size_t>(r), static_cast<std::size_t>(s), ci}) * k.at({a, c, ci, o});
            }
          }
        y.at({i, j, o}) = acc;
      }
  return y;
}

inline Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.extent(0), n = b.extent(1), kk = a.extent(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < kk; ++p) acc += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = acc;
    }
  return c;
}

inline std::vector<double> squash(const std::vector<double>& s) {
  double q = 0;
  for (double v : s) q += v * v;
  const double n = std::sqrt(q);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = q / (1 + q) * s[i] / (n + 1e-7);
  return out;
}

// Textbook routing-by-agreement with scalar loops; u [Nin][Nout][Dout].
inline std::vector<std::vector<double>> routing(const std::vector<std::vector<std::vector<double>>>& u,
                                                std::size_t iterations) {
  const std::size_t nin = u.size(), nout = u[0].size(), d = u[0][0].size();
  std::vector<std::vector<double>> b(nin, std::vector<double>(nout, 0.0));
  std::vector<std::vector<double>> v(nout, std::vector<double>(d, 0.0));
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> c(nin, std::vector<double>(nout));
    for (std::size_t i = 0; i < nin; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < nout; ++j) z += std::exp(b[i][j]);
      for (std::size_t j = 0; j < nout; ++j) c[i][j] = std::exp(b[i][j]) / z;
    }
    for (std::size_t j = 0; j < nout; ++j) {
      std::vector<double> s(d, 0.0);
      for (std::size_t i = 0; i < nin; ++i)
        for (std::size_t k = 0; k < d; ++k) s[k] += c[i][j] * u[i][j][k];
      v[j] = squash(s);
    }
    if (it + 1 < iterations) {
      for (std::size_t i = 0; i < nin; ++i)
        for (std::size_t j = 0; j < nout; ++j)
          for (std::size_t k = 0; k < d; ++k) b[i][j] += u[i][j][k] * v[j][k];
    }
  }
  return v;
}

// Fraction of (positive, negative) pairs ranked correctly; ties count 0.5.
inline double pair_count_auc(std::span<const double> scores, std::span<const capslstm::Label> labels) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != capslstm::Label::Fake) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != capslstm::Label::Real) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Keras parameter formulas.
inline std::size_t conv_params(std::size_t k, std::size_t cin, std::size_t f) { return k * k * cin * f + f; }
inline std::size_t convlstm_params(std::size_t k, std::size_t cin, std::size_t f) {
  return 4 * (k * k * (cin + f) * f + f);
}
inline std::size_t lstm_params(std::size_t din, std::size_t u) { return 4 * ((din + u) * u + u); }
inline std::size_t dense_params(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace oracle
