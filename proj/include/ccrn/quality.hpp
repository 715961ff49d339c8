#pragma once

// Objective quality measures: an energy VAD, autocorrelation-method LPC,
// the LPC log-likelihood ratio over active frames, and a speech-to-
// reverberation modulation energy ratio built on a gammatone filterbank.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "ccrn/error.hpp"
#include "ccrn/fft.hpp"
#include "ccrn/frontend.hpp"

namespace ccrn {

struct LpcFrame {
  std::vector<double> coeffs;    // a[0] = 1
  std::vector<double> autocorr;  // r[0..order]
  double error = 0.0;            // final prediction error energy
};

struct QualityReport {
  double llr = 0.0;
  double srmr = 0.0;
  std::size_t n_active_frames = 0;
};

namespace quality {

inline constexpr int kLpcOrder = 16;
inline constexpr double kLlrCap = 2.0;

inline std::vector<bool> vad_mask(const Waveform& w, int frame = 400, int hop = 160, double threshold_db = 35.0) {
  const Matrix frames = frontend::frame_samples(w.samples, frame, hop);
  std::vector<double> energy(static_cast<std::size_t>(frames.rows()));
  double peak = 0.0;
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    energy[t] = frames.row(t).squaredNorm();
    peak = std::max(peak, energy[t]);
  }
  std::vector<bool> mask(energy.size(), false);
  if (peak <= 0.0) return mask;
  const double floor = peak * std::pow(10.0, -threshold_db / 10.0);
  for (std::size_t t = 0; t < energy.size(); ++t) mask[t] = energy[t] > 0.0 && energy[t] >= floor;
  return mask;
}

inline std::vector<double> autocorrelation(std::span<const double> x, int order) {
  std::vector<double> r(static_cast<std::size_t>(order + 1), 0.0);
  const std::size_t n = x.size();
  for (int k = 0; k <= order; ++k) {
    double s = 0.0;
    for (std::size_t i = static_cast<std::size_t>(k); i < n; ++i) s += x[i] * x[i - k];
    r[k] = s;
  }
  return r;
}

/// Levinson-Durbin on the biased autocorrelation. Empty when the frame is
/// silent or the prediction error vanishes mid-recursion.
inline std::optional<LpcFrame> lpc(std::span<const double> frame, int order = kLpcOrder) {
  require(order >= 1, "LPC order must be at least 1");
  LpcFrame out;
  out.autocorr = autocorrelation(frame, order);
  const auto& r = out.autocorr;
  if (!(r[0] > 0.0)) return std::nullopt;

  std::vector<double> a(static_cast<std::size_t>(order + 1), 0.0), prev;
  a[0] = 1.0;
  double err = r[0];
  for (int i = 1; i <= order; ++i) {
    double acc = r[i];
    for (int j = 1; j < i; ++j) acc += a[j] * r[i - j];
    const double k = -acc / err;
    prev = a;
    for (int j = 1; j < i; ++j) a[j] = prev[j] + k * prev[i - j];
    a[i] = k;
    err *= (1.0 - k * k);
    if (!(err > 0.0)) return std::nullopt;
  }
  out.coeffs = std::move(a);
  out.error = err;
  return out;
}

/// a^T R a with R the symmetric Toeplitz matrix built from r.
inline double toeplitz_quadratic(const std::vector<double>& a, const std::vector<double>& r) {
  const std::size_t p = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) s += a[i] * r[i > j ? i - j : j - i] * a[j];
  return s;
}

struct LlrResult {
  double mean = 0.0;
  std::size_t n_frames = 0;
};

inline LlrResult llr_detail(const Waveform& reference, const Waveform& test) {
  Waveform aligned = test;
  aligned.samples.resize(reference.size(), 0.0);
  const auto mask = vad_mask(reference);
  const Matrix ref_frames = frontend::frame_samples(reference.samples, 400, 160);
  const Matrix test_frames = frontend::frame_samples(aligned.samples, 400, 160);

  double sum = 0.0;
  std::size_t count = 0;
  std::vector<double> buf(400);
  for (Eigen::Index t = 0; t < ref_frames.rows(); ++t) {
    if (!mask[t]) continue;
    for (int n = 0; n < 400; ++n) buf[n] = ref_frames(t, n);
    const auto ref = lpc(buf);
    if (!ref) continue;
    for (int n = 0; n < 400; ++n) buf[n] = test_frames(t, n);
    const auto est = lpc(buf);
    double value = kLlrCap;
    if (est) {
      const double num = toeplitz_quadratic(est->coeffs, ref->autocorr);
      const double den = toeplitz_quadratic(ref->coeffs, ref->autocorr);
      value = std::clamp(std::log(num / den), 0.0, kLlrCap);
    }
    sum += value;
    ++count;
  }
  require(count > 0, "LLR: reference has no active frames");
  return {sum / static_cast<double>(count), count};
}

inline double llr(const Waveform& reference, const Waveform& test) { return llr_detail(reference, test).mean; }

// ---------------------------------------------------------------------------
// SRMR

inline constexpr int kGammatoneChannels = 23;
inline constexpr int kModulationBands = 8;

inline double erb_bandwidth(double hz) { return 24.7 * (4.37 * hz / 1000.0 + 1.0); }
inline double erb_rate(double hz) { return 21.4 * std::log10(1.0 + 0.00437 * hz); }
inline double erb_rate_to_hz(double e) { return (std::pow(10.0, e / 21.4) - 1.0) / 0.00437; }

inline std::array<double, kGammatoneChannels> gammatone_centers(double lo = 125.0, double hi = 8000.0) {
  std::array<double, kGammatoneChannels> c{};
  const double a = erb_rate(lo), b = erb_rate(hi);
  for (int i = 0; i < kGammatoneChannels; ++i) c[i] = erb_rate_to_hz(a + (b - a) * i / (kGammatoneChannels - 1));
  return c;
}

inline std::array<double, kModulationBands> modulation_centers() {
  std::array<double, kModulationBands> c{};
  for (int k = 0; k < kModulationBands; ++k) c[k] = 4.0 * std::pow(32.0, k / 7.0);
  return c;
}

/// Per-band modulation energy summed over all acoustic channels.
inline std::array<double, kModulationBands> modulation_energy(const Waveform& w) {
  const std::size_t n = fft::next_pow2(w.size());
  const auto spectrum = fft::forward_real(w.samples, n);
  const double fs = w.sample_rate;
  const auto centers = gammatone_centers();
  const auto mod_c = modulation_centers();
  const double ratio = std::pow(32.0, 1.0 / 7.0);

  std::array<double, kModulationBands + 1> edges{};
  edges[0] = mod_c[0] / std::sqrt(ratio);
  for (int k = 0; k < kModulationBands; ++k) edges[k + 1] = mod_c[k] * std::sqrt(ratio);

  std::array<double, kModulationBands> energy{};
  std::vector<fft::Complex> band(n);
  std::vector<double> envelope(w.size());
  for (double fc : centers) {
    const double b = 1.019 * erb_bandwidth(fc);
    std::fill(band.begin(), band.end(), fft::Complex{});
    for (std::size_t k = 1; k < n / 2; ++k) {
      const double f = static_cast<double>(k) * fs / n;
      const fft::Complex g = std::pow(fft::Complex(1.0, (f - fc) / b), -4);
      band[k] = 2.0 * spectrum[k] * g;
    }
    const auto analytic = fft::inverse(band);
    for (std::size_t i = 0; i < w.size(); ++i) envelope[i] = std::abs(analytic[i]);
    const auto env_spec = fft::forward_real(envelope, n);
    for (std::size_t k = 1; k < n / 2; ++k) {
      const double f = static_cast<double>(k) * fs / n;
      if (f < edges.front() || f >= edges.back()) continue;
      const int idx = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), f) - edges.begin()) - 1;
      energy[idx] += std::norm(env_spec[k]);
    }
  }
  return energy;
}

inline double srmr(const Waveform& w) {
  require(w.size() >= static_cast<std::size_t>(w.sample_rate / 2), "SRMR needs at least 0.5 s of signal");
  const auto e = modulation_energy(w);
  double low = 0.0, high = 0.0;
  for (int k = 0; k < 4; ++k) low += e[k];
  for (int k = 4; k < kModulationBands; ++k) high += e[k];
  require(low > 0.0 && high > 0.0, "SRMR: zero modulation energy");
  return low / high;
}

inline QualityReport assess(const Waveform& reference, const Waveform& test) {
  const auto l = llr_detail(reference, test);
  return {l.mean, srmr(test), l.n_frames};
}

}  // namespace quality
}  // namespace ccrn
