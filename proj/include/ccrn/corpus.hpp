#pragma once

// Synthetic reverberation and noise corruption, a speech-like signal
// generator for desk-scale corpora, PCM16 WAV I/O, and the corpus manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccrn/error.hpp"
#include "ccrn/fft.hpp"
#include "ccrn/frontend.hpp"

namespace ccrn {

struct RirSpec {
  double rt60 = 0.5;
  double drr_db = 0.0;
  std::size_t length = 0;  // 0 selects rt60 * fs samples
  std::uint64_t seed = 0;
};

enum class NoiseKind { white, speech_shaped };

struct CorruptionSpec {
  RirSpec rir;
  double snr_db = 20.0;  // +inf disables noise
  NoiseKind noise_kind = NoiseKind::speech_shaped;
  std::uint64_t seed = 0;
};

namespace corpus {

/// Mixes a 64-bit value into a well-spread seed (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::size_t rir_length(const RirSpec& spec, int fs = kSampleRate) {
  if (spec.length > 0) return spec.length;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.rt60 * fs)));
}

/// Direct path at h[0] plus an exponentially decaying Gaussian tail whose
/// energy sits drr_db below the direct path.
inline std::vector<double> synth_rir(const RirSpec& spec, int fs = kSampleRate) {
  require(spec.rt60 >= 0.0, "rt60 must be non-negative");
  const std::size_t n = rir_length(spec, fs);
  std::vector<double> h(n, 0.0);
  h[0] = 1.0;
  if (spec.rt60 == 0.0 || n < 2) return h;

  std::mt19937_64 rng(mix_seed(spec.seed, 0x5151));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double decay = 3.0 * std::log(10.0) / (spec.rt60 * fs);
  double tail_energy = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    h[i] = gauss(rng) * std::exp(-decay * static_cast<double>(i));
    tail_energy += h[i] * h[i];
  }
  const double wanted = std::pow(10.0, -spec.drr_db / 10.0);
  const double gain = std::sqrt(wanted / tail_energy);
  for (std::size_t i = 1; i < n; ++i) h[i] *= gain;
  return h;
}

inline double power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

inline std::vector<double> make_noise(std::size_t n, NoiseKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x4e4f));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(n);
  double state = 0.0;
  for (auto& v : noise) {
    const double e = gauss(rng);
    if (kind == NoiseKind::white) {
      v = e;
    } else {
      // leaky integrator: -6 dB/octave above ~130 Hz
      state = 0.95 * state + e;
      v = state;
    }
  }
  return noise;
}

/// Adds stationary noise at spec.snr_db below the power of `wet`.
inline void add_noise(std::vector<double>& wet, const CorruptionSpec& spec) {
  const double wet_power = power(wet);
  require(wet_power > 0.0, "silent input: SNR undefined");
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) return;
  const auto noise = make_noise(wet.size(), spec.noise_kind, spec.seed);
  const double gain = std::sqrt(wet_power / std::pow(10.0, spec.snr_db / 10.0) / power(noise));
  for (std::size_t i = 0; i < wet.size(); ++i) wet[i] += gain * noise[i];
}

/// clean * h truncated to the clean length, plus stationary noise at snr_db
/// relative to the reverberant signal.
inline Waveform corrupt(const Waveform& clean, const CorruptionSpec& spec) {
  require(!clean.samples.empty(), "cannot corrupt an empty waveform");
  require(!std::isnan(spec.snr_db), "snr_db must be a number");
  Waveform out{{}, clean.sample_rate};
  const auto h = synth_rir(spec.rir, clean.sample_rate);
  if (h.size() == 1 && h[0] == 1.0) {
    out.samples = clean.samples;
  } else {
    out.samples = fft::convolve(clean.samples, h);
    out.samples.resize(clean.size());
  }
  add_noise(out.samples, spec);
  return out;
}

/// corrupt() restricted to [start, start + length): the reverberant part is
/// exact (the preceding impulse-response span of clean signal is included),
/// and the noise level is set against the span's own reverberant power.
inline Waveform corrupt_span(const Waveform& clean, const CorruptionSpec& spec, std::size_t start, std::size_t length) {
  require(start + length <= clean.size() && length > 0, "corrupt_span: span outside the signal");
  const auto h = synth_rir(spec.rir, clean.sample_rate);
  const std::size_t begin = start + 1 >= h.size() ? start + 1 - h.size() : 0;
  Waveform out{{}, clean.sample_rate};
  if (h.size() == 1 && h[0] == 1.0) {
    out.samples.assign(clean.samples.begin() + static_cast<long>(start),
                       clean.samples.begin() + static_cast<long>(start + length));
  } else {
    const std::span<const double> excerpt(clean.samples.data() + begin, start + length - begin);
    const auto wet = fft::convolve(excerpt, h);
    out.samples.assign(wet.begin() + static_cast<long>(start - begin),
                       wet.begin() + static_cast<long>(start - begin + length));
  }
  add_noise(out.samples, spec);
  return out;
}

// ---------------------------------------------------------------------------
// Speech-like test signals: voiced syllables (glottal pulse train through
// three formant resonators), occasional fricatives, and low-level pauses.

namespace detail {

struct Resonator {
  double a1 = 0, a2 = 0, gain = 1, y1 = 0, y2 = 0;

  double r = 0;
  int fs = kSampleRate;

  Resonator(double freq, double bandwidth, int sample_rate) : fs(sample_rate) {
    r = std::exp(-std::numbers::pi * bandwidth / fs);
    a2 = -r * r;
    gain = 1.0 - r;
    tune(freq);
  }
  /// Retune the centre frequency, keeping the filter state.
  void tune(double freq) { a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / fs); }
  double step(double x) {
    const double y = gain * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace detail

inline Waveform synth_speech(std::uint64_t seed, double duration_s, int fs = kSampleRate) {
  require(duration_s > 0.0, "duration must be positive");
  std::mt19937_64 rng(mix_seed(seed, 0x5350));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(std::lround(duration_s * fs));
  Waveform w{std::vector<double>(n, 0.0), fs};

  std::size_t pos = static_cast<std::size_t>(fs * (0.05 + 0.1 * uni(rng)));
  const double base_f0 = 95.0 + 120.0 * uni(rng);
  while (pos < n) {
    const bool fricative = uni(rng) < 0.2;
    const std::size_t len = static_cast<std::size_t>(fs * (fricative ? 0.06 + 0.08 * uni(rng) : 0.12 + 0.2 * uni(rng)));
    const double f1 = 300 + 500 * uni(rng), f2 = 900 + 1400 * uni(rng), f3 = 2400 + 700 * uni(rng);
    const double f2_end = std::clamp(f2 + 400 * (uni(rng) - 0.5), 800.0, 2500.0);
    const double f0_start = base_f0 * (0.85 + 0.3 * uni(rng));
    const double f0_end = f0_start * (0.8 + 0.35 * uni(rng));
    const double level = 0.3 + 0.7 * uni(rng);
    detail::Resonator r1(f1, 80, fs), r2(f2, 110, fs), r3(f3, 160, fs), hiss(4500 + 2000 * uni(rng), 2500, fs);
    double phase = uni(rng), glottal = 0.0;
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double u = static_cast<double>(i) / len;
      const double env = level * std::sin(std::numbers::pi * u) * (0.6 + 0.4 * std::sin(std::numbers::pi * u));
      double s;
      if (fricative) {
        s = 0.8 * hiss.step(gauss(rng));
      } else {
        const double f0 = f0_start + (f0_end - f0_start) * u;
        phase += f0 / fs;
        double pulse = 0.0;
        if (phase >= 1.0) {
          phase -= 1.0;
          pulse = 1.0;
        }
        glottal = 0.96 * glottal + pulse + 0.02 * gauss(rng);
        r2.tune(f2 + (f2_end - f2) * u);
        s = r1.step(glottal) + 0.7 * r2.step(glottal) + 0.35 * r3.step(glottal);
      }
      w.samples[pos + i] += env * s;
    }
    pos += len + static_cast<std::size_t>(fs * (uni(rng) < 0.3 ? 0.1 + 0.2 * uni(rng) : 0.01 + 0.05 * uni(rng)));
  }

  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0 ? 0.5 / peak : 1.0;
  for (auto& v : w.samples) v = v * gain + 3e-4 * gauss(rng);
  return w;
}

// ---------------------------------------------------------------------------
// PCM16 mono WAV

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);
  detail::put_u16(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(w.sample_rate * 2));
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  std::size_t clipped = 0;
  std::vector<char> buf(w.size() * 2);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double q = std::round(w.samples[i] * 32768.0);
    if (q > 32767.0 || q < -32768.0) {
      ++clipped;
      q = std::clamp(q, -32768.0, 32767.0);
    }
    const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(q));
    buf[2 * i] = static_cast<char>(v & 0xff);
    buf[2 * i + 1] = static_cast<char>(v >> 8);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw RuntimeFailure("write failed: " + path.string());
  if (clipped > 0) std::cerr << "warning: clipped " << clipped << " samples writing " << path.string() << "\n";
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ValidationError(where + "not a RIFF/WAVE file");

  bool have_fmt = false;
  std::size_t pos = 12;
  Waveform w;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::get_u32(&bytes[pos + 4]);
    const unsigned char* body = &bytes[pos + 8];
    if (pos + 8 + size > bytes.size()) throw ValidationError(where + "truncated chunk");
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
      if (size < 16) throw ValidationError(where + "malformed fmt chunk");
      const auto format = detail::get_u16(body), channels = detail::get_u16(body + 2);
      const auto rate = detail::get_u32(body + 4);
      const auto bits = detail::get_u16(body + 14);
      if (format != 1 || bits != 16)
        throw ValidationError(where + "unsupported encoding (format " + std::to_string(format) + ", " +
                              std::to_string(bits) + " bits); expected PCM16");
      if (channels != 1) throw ValidationError(where + "expected mono, found " + std::to_string(channels) + " channels");
      if (rate != kSampleRate) throw ValidationError(where + "expected 16000 Hz, found " + std::to_string(rate) + " Hz");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      if (!have_fmt) throw ValidationError(where + "data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(detail::get_u16(body + 2 * i)) / 32768.0;
      return w;
    }
    pos += 8 + size + (size & 1);
  }
  throw ValidationError(where + "missing fmt or data chunk");
}

// ---------------------------------------------------------------------------
// Manifest CSV. The first three columns are fixed; synthesized corpora add
// the clean reference and condition columns.

struct ManifestRow {
  std::string id;
  std::string path;
  double duration_s = 0.0;
  std::string clean_path;
  std::string condition;
  double rt60 = 0.0;
  double drr_db = 0.0;
  double snr_db = 0.0;
};

inline constexpr const char* kManifestHeader = "id,path,duration_s,clean_path,condition,rt60,drr_db,snr_db";

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << kManifestHeader << "\n";
  for (const auto& r : rows)
    os << r.id << ',' << r.path << ',' << format_number(r.duration_s) << ',' << r.clean_path << ',' << r.condition
       << ',' << format_number(r.rt60) << ',' << format_number(r.drr_db) << ',' << format_number(r.snr_db) << "\n";
  if (!os) throw RuntimeFailure("write failed: " + path.string());
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw RuntimeFailure("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ValidationError(path.string() + ": empty manifest");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "path" || header[2] != "duration_s")
    throw ValidationError(path.string() + ": manifest header must start with id,path,duration_s");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " columns");
    ManifestRow r;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const auto& h = header[i];
      const auto& c = cells[i];
      if (h == "id") r.id = c;
      else if (h == "path") r.path = c;
      else if (h == "duration_s") r.duration_s = std::stod(c);
      else if (h == "clean_path") r.clean_path = c;
      else if (h == "condition") r.condition = c;
      else if (h == "rt60") r.rt60 = std::stod(c);
      else if (h == "drr_db") r.drr_db = std::stod(c);
      else if (h == "snr_db") r.snr_db = std::stod(c);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace corpus
}  // namespace ccrn
