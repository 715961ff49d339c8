#pragma once

// Waveform-in, waveform-out enhancement and the evaluation loop built on it.

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <optional>
#include <string>
#include <vector>

#include "ccrn/corpus.hpp"
#include "ccrn/frontend.hpp"
#include "ccrn/netmodel.hpp"
#include "ccrn/quality.hpp"

namespace ccrn::pipeline {

struct EnhancedUtterance {
  Waveform wav;
  LogSpectrogram spectrum;  // 512-bin log magnitudes used for synthesis
  std::vector<LogSpectrogram> probe_spectra;
  std::vector<Waveform> probe_wavs;
};

/// Features, forward pass (first `blocks` blocks when given), synthesis with
/// the noisy phase. With `probes`, every block's residual path is synthesized too.
inline EnhancedUtterance enhance_waveform(ModelParams<float>& model, const Waveform& in,
                                          std::optional<int> blocks = std::nullopt, bool probes = false,
                                          const FrontendConfig& fcfg = {}) {
  require(in.sample_rate == kSampleRate, "input sample rate " + std::to_string(in.sample_rate) + " Hz, expected 16000");
  const int L = model.config.blocks;
  const int use = blocks.value_or(L);
  require(use >= 1 && use <= L, "--blocks must lie in [1, " + std::to_string(L) + "]");

  const auto analysis = frontend::assemble_features(in, fcfg);
  ModelParams<float> active = use == L ? model : net::truncate(model, use);
  auto enh = net::enhance(active, analysis.features, probes);

  auto synth = [&](const LogSpectrogram& est) {
    LogSpectrogram full = frontend::transfer_fine_structure(est, analysis.noisy);
    Waveform w = frontend::reconstruct(full, analysis.phase, in.size());
    return std::pair{std::move(full), std::move(w)};
  };

  EnhancedUtterance out;
  std::tie(out.spectrum, out.wav) = synth(enh.output);
  for (const auto& p : enh.probes) {
    auto [s, w] = synth(p);
    out.probe_spectra.push_back(std::move(s));
    out.probe_wavs.push_back(std::move(w));
  }
  return out;
}

/// Runs f(i) for i in [0, n) on up to hardware_concurrency threads. The first
/// exception (lowest index) is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_at) {
            failed_at = i;
            failure = std::current_exception();
          }
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ConditionSummary {
  std::string condition;
  int count = 0;
  double mean_llr = 0;
  double mean_srmr = 0;
};

struct ScoredUtterance {
  std::string id;
  std::string condition;
  QualityReport report;
};

/// Per-condition means in order of first appearance.
inline std::vector<ConditionSummary> summarize(const std::vector<ScoredUtterance>& rows) {
  std::vector<ConditionSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.condition == r.condition; });
    if (it == out.end()) {
      out.push_back({r.condition});
      it = std::prev(out.end());
    }
    ++it->count;
    it->mean_llr += r.report.llr;
    it->mean_srmr += r.report.srmr;
  }
  for (auto& s : out) {
    s.mean_llr /= s.count;
    s.mean_srmr /= s.count;
  }
  return out;
}

}  // namespace ccrn::pipeline
