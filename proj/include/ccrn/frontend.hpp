#pragma once

// Multi-window acoustic front-end.
//
// Every matrix here is frames x dims (one row per 10 ms hop). The network
// consumes the transpose (dims x frames), which for a column-major Eigen
// matrix is just a reinterpretation of the same layout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccrn/error.hpp"
#include "ccrn/fft.hpp"

namespace ccrn {

inline constexpr int kSampleRate = 16000;
inline constexpr int kSpectrumBins = 512;
inline constexpr int kPhaseBins = kSpectrumBins / 2 + 1;
inline constexpr int kFeatureDim = 876;
inline constexpr double kMagnitudeFloor = 1e-10;

using Matrix = Eigen::MatrixXd;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// T x bands natural-log magnitudes, 25 ms window, 10 ms hop.
struct LogSpectrogram {
  Matrix frames;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index bands() const { return frames.cols(); }
};

/// T x 876 network input, already scaled per dimension.
struct FeatureSequence {
  Matrix frames;
  Eigen::VectorXd norm_scale;
  Eigen::VectorXd norm_offset;  // zero unless mean subtraction is enabled

  Eigen::Index num_frames() const { return frames.rows(); }
};

/// T x 257 phase (radians) of the 25 ms analysis.
struct PhaseSpectrogram {
  Matrix frames;
};

struct FrontendConfig {
  bool subtract_mean = false;
};

namespace frontend {

inline int ms_to_samples(double ms, int fs = kSampleRate) {
  return static_cast<int>(std::lround(ms * fs / 1000.0));
}

/// Periodic Hamming window.
inline std::vector<double> hamming(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n)
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / length);
  return w;
}

/// Frames starting at `offset + t*hop`; samples before index 0 read as zero.
/// Only frames that end inside the signal are produced.
inline Matrix frame_samples(std::span<const double> x, int width, int hop, int offset = 0) {
  require(width > 0 && hop > 0, "frame width and hop must be positive");
  const long len = static_cast<long>(x.size());
  const long usable = len - offset - width;
  require(usable >= 0, "signal shorter than one analysis window (" + std::to_string(len) +
                           " < " + std::to_string(width + offset) + " samples)");
  const long count = usable / hop + 1;
  const auto window = hamming(width);
  Matrix frames(count, width);
  for (long t = 0; t < count; ++t) {
    const long start = offset + t * hop;
    for (int n = 0; n < width; ++n) {
      const long i = start + n;
      frames(t, n) = (i >= 0 && i < len) ? x[static_cast<std::size_t>(i)] * window[n] : 0.0;
    }
  }
  return frames;
}

inline Matrix frame_signal(const Waveform& w, double win_ms, double hop_ms) {
  require(w.sample_rate == kSampleRate, "sample rate must be 16000 Hz");
  return frame_samples(w.samples, ms_to_samples(win_ms), ms_to_samples(hop_ms));
}

inline std::vector<fft::Complex> frame_spectrum(const Matrix& frames, Eigen::Index t, std::size_t nfft) {
  std::vector<double> row(static_cast<std::size_t>(frames.cols()));
  for (Eigen::Index n = 0; n < frames.cols(); ++n) row[n] = frames(t, n);
  return fft::forward_real(row, nfft);
}

inline LogSpectrogram log_spectrum(const Matrix& frames, int nfft = kSpectrumBins) {
  require(frames.cols() <= nfft, "frame longer than FFT size");
  LogSpectrogram out{Matrix(frames.rows(), nfft)};
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const auto spec = frame_spectrum(frames, t, nfft);
    for (int k = 0; k < nfft; ++k) out.frames(t, k) = std::log(std::max(std::abs(spec[k]), kMagnitudeFloor));
  }
  return out;
}

inline PhaseSpectrogram phase_spectrum(const Matrix& frames, int nfft = kSpectrumBins) {
  PhaseSpectrogram out{Matrix(frames.rows(), nfft / 2 + 1)};
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const auto spec = frame_spectrum(frames, t, nfft);
    for (int k = 0; k <= nfft / 2; ++k) {
      double phi = std::arg(spec[k]);
      if (phi <= -std::numbers::pi) phi = std::numbers::pi;
      out.frames(t, k) = phi;
    }
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of `n_mels` triangular filters spanning 0-8 kHz.
inline std::vector<double> mel_centers(int n_mels) {
  const double top = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> c(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) c[m] = mel_to_hz(top * (m + 1) / (n_mels + 1));
  return c;
}

/// n_mels x (nfft/2+1) triangular weights with continuous (unrounded) edges.
inline Matrix mel_filterbank(int n_mels, int nfft) {
  const double top = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int m = 0; m < n_mels + 2; ++m) edges[m] = mel_to_hz(top * m / (n_mels + 1));
  const int half = nfft / 2 + 1;
  Matrix fb = Matrix::Zero(n_mels, half);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < half; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / nfft;
      if (f > lo && f <= mid)
        fb(m, k) = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        fb(m, k) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

inline int mel_fft_size(Eigen::Index frame_len) {
  return static_cast<int>(fft::next_pow2(static_cast<std::size_t>(std::max<Eigen::Index>(frame_len, 512))));
}

/// T x n_mels log filterbank energies of the power spectrum. The FFT size is
/// the next power of two at or above the frame length (512/1024/2048).
inline Matrix mel_features(const Matrix& frames, int n_mels) {
  require(n_mels > 0, "n_mels must be positive");
  const int nfft = mel_fft_size(frames.cols());
  const Matrix fb = mel_filterbank(n_mels, nfft);
  const int half = nfft / 2 + 1;
  Matrix out(frames.rows(), n_mels);
  Eigen::VectorXd power(half);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const auto spec = frame_spectrum(frames, t, static_cast<std::size_t>(nfft));
    for (int k = 0; k < half; ++k) power[k] = std::norm(spec[k]);
    const Eigen::VectorXd energy = fb * power;
    for (int m = 0; m < n_mels; ++m) out(t, m) = std::log(std::max(energy[m], kMagnitudeFloor));
  }
  return out;
}

/// Orthonormal DCT-II of each row, first n_ceps coefficients.
inline Matrix cepstral_features(const Matrix& log_mel, int n_ceps) {
  const Eigen::Index n = log_mel.cols();
  require(n_ceps >= 0 && n_ceps <= n, "n_ceps must not exceed the filterbank size");
  Matrix basis(n, n_ceps);
  for (Eigen::Index k = 0; k < n_ceps; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (Eigen::Index i = 0; i < n; ++i)
      basis(i, k) = s * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
  }
  return log_mel * basis;
}

/// Magnitude-domain pooling of a 512-bin log spectrum into `bands` equal groups
/// of adjacent bins. bands == 512 is the identity.
inline LogSpectrogram pool_bands(const LogSpectrogram& spec, int bands) {
  const auto bins = spec.bands();
  require(bands > 0 && bins % bands == 0, "band count must divide the spectrum size");
  const auto group = bins / bands;
  if (group == 1) return spec;
  LogSpectrogram out{Matrix(spec.num_frames(), bands)};
  for (Eigen::Index t = 0; t < spec.num_frames(); ++t)
    for (int b = 0; b < bands; ++b)
      out.frames(t, b) = std::log(spec.frames.row(t).segment(b * group, group).array().exp().mean());
  return out;
}

/// Inverse of pool_bands up to resolution: each band value is repeated over its bins.
inline LogSpectrogram expand_bands(const LogSpectrogram& spec, int bins = kSpectrumBins) {
  const auto bands = spec.bands();
  require(bands > 0 && bins % bands == 0, "band count must divide the spectrum size");
  const auto group = bins / bands;
  if (group == 1) return spec;
  LogSpectrogram out{Matrix(spec.num_frames(), bins)};
  for (Eigen::Index t = 0; t < spec.num_frames(); ++t)
    for (Eigen::Index b = 0; b < bands; ++b) out.frames.row(t).segment(b * group, group).setConstant(spec.frames(t, b));
  return out;
}

/// Analysis geometry of one feature stream. Longer windows are centred on the
/// 25 ms frame, so their first frames read zeros before the signal start.
struct StreamSpec {
  int window;
  int n_mels;
};

inline constexpr std::array<StreamSpec, 3> kStreams{{{400, 32}, {800, 50}, {1200, 100}}};
inline constexpr int kHop = 160;
inline constexpr int kBaseWindow = 400;

/// Frames common to all streams for a signal of `len` samples.
inline long common_frames(long len) {
  const int longest = kStreams.back().window;
  const long reach = (longest - kBaseWindow) / 2 + kBaseWindow;
  if (len < reach) return 0;
  return (len - reach) / kHop + 1;
}

struct Analysis {
  FeatureSequence features;
  PhaseSpectrogram phase;
  LogSpectrogram noisy;  // unnormalized 512-bin log spectrum of the input
};

inline LogSpectrogram clean_target(const Waveform& w, int bands = kSpectrumBins) {
  const Matrix frames = frame_samples(w.samples, kBaseWindow, kHop);
  return pool_bands(log_spectrum(frames), bands);
}

inline Analysis assemble_features(const Waveform& w, const FrontendConfig& cfg = {}) {
  require(w.sample_rate == kSampleRate, "sample rate must be 16000 Hz");
  require(static_cast<long>(w.size()) >= kStreams.back().window, "signal shorter than 75 ms");
  const long T = common_frames(static_cast<long>(w.size()));

  std::vector<Matrix> blocks;
  PhaseSpectrogram phase;
  LogSpectrogram noisy;
  for (const auto& s : kStreams) {
    const int offset = -(s.window - kBaseWindow) / 2;
    Matrix frames = frame_samples(w.samples, s.window, kHop, offset);
    if (frames.rows() < T) throw std::logic_error("feature stream shorter than common frame count");
    frames.conservativeResize(T, Eigen::NoChange);
    if (s.window == kBaseWindow) {
      noisy = log_spectrum(frames);
      blocks.push_back(noisy.frames);
      phase = phase_spectrum(frames);
    }
    Matrix mel = mel_features(frames, s.n_mels);
    Matrix cep = cepstral_features(mel, s.n_mels);
    blocks.push_back(std::move(mel));
    blocks.push_back(std::move(cep));
  }

  FeatureSequence fs;
  fs.frames.resize(T, kFeatureDim);
  Eigen::Index col = 0;
  for (const auto& b : blocks) {
    fs.frames.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  if (col != kFeatureDim) throw std::logic_error("feature width mismatch");

  fs.norm_scale.resize(kFeatureDim);
  fs.norm_offset = Eigen::VectorXd::Zero(kFeatureDim);
  for (Eigen::Index d = 0; d < kFeatureDim; ++d) {
    auto column = fs.frames.col(d);
    const double mean = column.mean();
    const double sd = std::sqrt((column.array() - mean).square().mean());
    const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
    if (cfg.subtract_mean) {
      fs.norm_offset[d] = mean;
      column.array() -= mean;
    }
    column *= scale;
    fs.norm_scale[d] = scale;
  }
  return {std::move(fs), std::move(phase), std::move(noisy)};
}

/// Full-resolution log spectrum from a band-pooled estimate: the noisy
/// spectrum's within-band detail plus the estimated per-band level change.
/// With 512 bands the estimate is returned unchanged.
inline LogSpectrogram transfer_fine_structure(const LogSpectrogram& estimate, const LogSpectrogram& noisy) {
  require(estimate.num_frames() == noisy.num_frames(), "estimate and noisy frame counts differ");
  require(noisy.bands() == kSpectrumBins, "noisy spectrum must have 512 bins");
  if (estimate.bands() == kSpectrumBins) return estimate;
  const LogSpectrogram gain{estimate.frames - pool_bands(noisy, static_cast<int>(estimate.bands())).frames};
  return {noisy.frames + expand_bands(gain).frames};
}

/// Weighted overlap-add synthesis from a log-magnitude spectrum (any band count
/// dividing 512) and a 257-bin phase.
inline Waveform reconstruct(const LogSpectrogram& enhanced, const PhaseSpectrogram& phase, std::size_t length) {
  require(enhanced.num_frames() == phase.frames.rows(), "spectrum and phase frame counts differ");
  require(phase.frames.cols() == kPhaseBins, "phase must have 257 bins");
  const LogSpectrogram full = expand_bands(enhanced);
  const auto window = hamming(kBaseWindow);
  const Eigen::Index T = full.num_frames();
  const std::size_t span = static_cast<std::size_t>(std::max<Eigen::Index>(0, (T - 1) * kHop + kBaseWindow));
  std::vector<double> acc(std::max(span, length), 0.0), norm(acc.size(), 0.0);

  std::vector<fft::Complex> spec(kSpectrumBins);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < kPhaseBins; ++k) {
      const int mirror = (kSpectrumBins - k) % kSpectrumBins;
      const double logmag = 0.5 * (full.frames(t, k) + full.frames(t, mirror));
      spec[k] = std::polar(std::exp(logmag), phase.frames(t, k));
    }
    spec[0] = {spec[0].real(), 0.0};
    spec[kSpectrumBins / 2] = {spec[kSpectrumBins / 2].real(), 0.0};
    for (int k = kPhaseBins; k < kSpectrumBins; ++k) spec[k] = std::conj(spec[kSpectrumBins - k]);
    const auto frame = fft::inverse(spec);
    const std::size_t start = static_cast<std::size_t>(t) * kHop;
    for (int n = 0; n < kBaseWindow; ++n) {
      acc[start + n] += frame[n].real() * window[n];
      norm[start + n] += window[n] * window[n];
    }
  }
  Waveform out;
  out.samples.assign(length, 0.0);
  for (std::size_t i = 0; i < length && i < acc.size(); ++i)
    if (norm[i] > 1e-8) out.samples[i] = acc[i] / norm[i];
  return out;
}

}  // namespace frontend
}  // namespace ccrn
