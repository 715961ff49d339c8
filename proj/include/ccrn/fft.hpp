#pragma once

// Thin wrapper over Eigen's FFT module. All spectra are full-length
// (no half-spectrum packing) so callers can index mirror bins directly.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace ccrn::fft {

using Complex = std::complex<double>;

inline Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> instance;
  return instance;
}

/// Forward DFT of a real signal zero-padded (or truncated) to `n` points.
inline std::vector<Complex> forward_real(std::span<const double> x, std::size_t n) {
  std::vector<double> padded(n, 0.0);
  const std::size_t m = std::min(n, x.size());
  for (std::size_t i = 0; i < m; ++i) padded[i] = x[i];
  std::vector<Complex> out;
  engine().fwd(out, padded);
  return out;
}

inline std::vector<Complex> forward(const std::vector<Complex>& x) {
  std::vector<Complex> out;
  engine().fwd(out, x);
  return out;
}

/// Inverse DFT, scaled by 1/n.
inline std::vector<Complex> inverse(const std::vector<Complex>& spectrum) {
  std::vector<Complex> out;
  engine().inv(out, spectrum);
  return out;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Full linear convolution of two real sequences via FFT.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  auto fa = forward_real(a, n);
  const auto fb = forward_real(b, n);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  const auto time = inverse(fa);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = time[i].real();
  return out;
}

}  // namespace ccrn::fft
