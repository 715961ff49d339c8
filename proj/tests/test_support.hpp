#pragma once

// Shared helpers for the test suites: seeded random matrices and the
// brute-force oracles that the library is checked against.

#include <cmath>
#include <complex>
#include <numbers>
#include <cstdint>
#include <random>
#include <vector>

#include "ccrn/diffcore.hpp"

namespace ccrn::oracle {

template <class S = double>
diff::Mat<S> random_matrix(diff::Index rows, diff::Index cols, std::mt19937_64& rng, double lo = -1.0,
                           double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  diff::Mat<S> m(rows, cols);
  for (diff::Index c = 0; c < cols; ++c)
    for (diff::Index r = 0; r < rows; ++r) m(r, c) = static_cast<S>(dist(rng));
  return m;
}

/// out[o][t] = b[o] + sum_i sum_j w[o][j][i] * x[i][t + j - pad], zero outside [0, T).
/// `w` uses the library's layout: column j*C_in + i holds tap j of input channel i.
inline diff::Mat<double> conv1d_oracle(const diff::Mat<double>& x, const diff::Mat<double>& w,
                                       const diff::Mat<double>& b, int k, int pad) {
  const int c_in = static_cast<int>(x.rows()), T = static_cast<int>(x.cols());
  const int c_out = static_cast<int>(w.rows());
  const int t_out = T + 2 * pad - k + 1;
  diff::Mat<double> out(c_out, t_out);
  for (int o = 0; o < c_out; ++o)
    for (int t = 0; t < t_out; ++t) {
      double s = b(o, 0);
      for (int i = 0; i < c_in; ++i)
        for (int j = 0; j < k; ++j) {
          const int src = t + j - pad;
          if (src >= 0 && src < T) s += w(o, j * c_in + i) * x(i, src);
        }
      out(o, t) = s;
    }
  return out;
}

/// Direct O(n^2) DFT magnitude of a real sequence zero-padded to n points.
inline std::vector<double> dft_magnitude(const std::vector<double>& x, int n) {
  std::vector<double> mag(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < x.size(); ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(t) / n);
    mag[k] = std::abs(acc);
  }
  return mag;
}

/// Direct orthonormal DCT-II.
inline std::vector<double> dct2(const std::vector<double>& x) {
  const auto n = x.size();
  std::vector<double> c(n);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::cos(std::numbers::pi * k * (i + 0.5) / n);
    c[k] = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / n);
  }
  return c;
}

inline double snr_db(const std::vector<double>& ref, const std::vector<double>& est, std::size_t begin,
                     std::size_t end) {
  double s = 0, e = 0;
  for (std::size_t i = begin; i < end; ++i) {
    s += ref[i] * ref[i];
    e += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  return 10.0 * std::log10(s / std::max(e, 1e-300));
}

}  // namespace ccrn::oracle
