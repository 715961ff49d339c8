#pragma once

// Subcommand implementations behind the `ccrn` executable. Argument parsing
// lives in tools/ccrn_cli.cpp; everything here takes plain option structs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccrn/config.hpp"
#include "ccrn/corpus.hpp"
#include "ccrn/gradcheck.hpp"
#include "ccrn/netmodel.hpp"
#include "ccrn/objectives.hpp"
#include "ccrn/pipeline.hpp"
#include "ccrn/quality.hpp"

namespace ccrn::cli {

namespace fs = std::filesystem;

inline std::string utterance_name(int u) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "u%03d", u);
  return buf;
}

inline std::string condition_name(double rt60) { return "rt60_" + corpus::format_number(rt60); }

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

// ---------------------------------------------------------------------------
// synth

inline constexpr double kSynthPeak = 0.99;

/// Writes clean/uNNN.wav, noisy/<condition>/uNNN.wav for every rt60 in the
/// config, and manifest.csv with one row per corrupted file. Corrupted
/// signals peaking above kSynthPeak are scaled down to it.
inline std::vector<corpus::ManifestRow> cmd_synth(const RunConfig& cfg, const fs::path& out_dir,
                                                  std::ostream& log = std::cout) {
  cfg.validate();
  const int n = cfg.corpus.utterances;
  const auto& rt60s = cfg.corpus.rt60;
  std::vector<Waveform> clean(static_cast<std::size_t>(n));
  std::vector<Waveform> noisy(static_cast<std::size_t>(n) * rt60s.size());
  std::vector<corpus::ManifestRow> rows(noisy.size());

  pipeline::parallel_for(static_cast<std::size_t>(n), [&](std::size_t u) {
    clean[u] = corpus::synth_speech(corpus::mix_seed(cfg.corpus.seed, u), cfg.corpus.duration_s);
    for (std::size_t c = 0; c < rt60s.size(); ++c) {
      const double drr = cfg.corpus.drr_db[u % cfg.corpus.drr_db.size()];
      const std::uint64_t s = corpus::mix_seed(cfg.corpus.seed, 1'000'003ULL * (c + 1) + u);
      CorruptionSpec spec{{rt60s[c], drr, 0, corpus::mix_seed(s, 1)}, cfg.corpus.snr_db, cfg.corpus.noise,
                          corpus::mix_seed(s, 2)};
      const std::size_t i = c * static_cast<std::size_t>(n) + u;
      noisy[i] = corpus::corrupt(clean[u], spec);
      // the metrics are gain invariant, so keep headroom rather than clip on write
      double peak = 0;
      for (double x : noisy[i].samples) peak = std::max(peak, std::abs(x));
      if (peak > kSynthPeak)
        for (auto& x : noisy[i].samples) x *= kSynthPeak / peak;
      const auto cond = condition_name(rt60s[c]);
      const auto name = utterance_name(static_cast<int>(u));
      rows[i] = {cond + "_" + name, "noisy/" + cond + "/" + name + ".wav", clean[u].duration_s(),
                 "clean/" + name + ".wav", cond, rt60s[c], drr, cfg.corpus.snr_db};
    }
  });

  fs::create_directories(out_dir / "clean");
  for (double rt : rt60s) fs::create_directories(out_dir / "noisy" / condition_name(rt));
  for (int u = 0; u < n; ++u) corpus::write_wav(out_dir / "clean" / (utterance_name(u) + ".wav"), clean[u]);
  for (std::size_t i = 0; i < rows.size(); ++i) corpus::write_wav(out_dir / rows[i].path, noisy[i]);
  corpus::write_manifest(out_dir / "manifest.csv", rows);
  log << "wrote " << n << " clean and " << rows.size() << " corrupted utterances to " << out_dir.string() << "\n";
  return rows;
}

// ---------------------------------------------------------------------------
// train

inline std::vector<Waveform> load_training_audio(const RunConfig& cfg) {
  std::vector<Waveform> out;
  if (cfg.paths.corpus.empty()) {
    for (int u = 0; u < cfg.corpus.utterances; ++u)
      out.push_back(corpus::synth_speech(corpus::mix_seed(cfg.corpus.seed, u), cfg.corpus.duration_s));
    return out;
  }
  const fs::path manifest(cfg.paths.corpus);
  const auto base = manifest.parent_path();
  for (const auto& row : corpus::read_manifest(manifest))
    out.push_back(corpus::read_wav(resolve(base, row.clean_path.empty() ? row.path : row.clean_path)));
  require(!out.empty(), "training manifest " + manifest.string() + " lists no audio");
  return out;
}

inline objectives::TrainingCorpus training_corpus(const RunConfig& cfg, std::vector<Waveform> audio) {
  objectives::TrainingCorpus c;
  c.utterances = std::move(audio);
  c.rt60s = cfg.corpus.rt60;
  c.drrs = cfg.corpus.drr_db;
  c.snr_db = cfg.corpus.snr_db;
  c.noise = cfg.corpus.noise;
  return c;
}

inline std::string format_costs(const CostReport& r) {
  std::ostringstream os;
  os << std::setprecision(5) << "total " << r.total << " | per block:";
  for (double j : r.per_block) os << ' ' << j;
  return os.str();
}

/// Trains from scratch, or continues a training checkpoint when `resume` is set.
inline objectives::TrainingState cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume = {},
                                           std::ostream& log = std::cout) {
  cfg.validate();
  require(cfg.model.input_dim == kFeatureDim, "training needs model.input_dim = 876");
  objectives::TrainingState st;
  if (resume) {
    st = objectives::from_training_checkpoint(checkpoint::load(*resume));
    require(st.model.config == cfg.model, "resume checkpoint model.* settings differ from the configuration");
    require(st.opt.step <= cfg.train.steps, "resume checkpoint is already past train.steps");
  }
  const auto corpus = training_corpus(cfg, load_training_audio(cfg));
  if (!resume) st.model = net::build_model<float>(cfg.model, cfg.train.seed);

  const fs::path log_path(cfg.paths.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream csv(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw RuntimeFailure("cannot open training log " + log_path.string());
  const fs::path ckpt(cfg.paths.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());

  const auto t0 = std::chrono::steady_clock::now();
  objectives::TrainOutputs out;
  out.checkpoint = ckpt;
  out.log = &csv;
  out.on_step = [&](long step, const CostReport& r) {
    if ((step + 1) % cfg.log_every != 0 && step + 1 != cfg.train.steps) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "step " << step + 1 << "/" << cfg.train.steps << " " << format_costs(r) << " (" << std::fixed
        << std::setprecision(1) << s << " s)" << std::defaultfloat << "\n"
        << std::flush;
  };
  objectives::train(st.model, st.opt, corpus, cfg.train, out);
  if (cfg.train.steps == st.opt.step && !fs::exists(ckpt))
    checkpoint::save(ckpt, objectives::training_checkpoint(st.model, st.opt));
  return st;
}

// ---------------------------------------------------------------------------
// enhance

/// Per-block means over the last `window` rows of a training log.
inline std::vector<double> logged_block_costs(const fs::path& log_path, int blocks, std::size_t window = 50) {
  std::ifstream is(log_path);
  if (!is) throw ValidationError("cannot open training log " + log_path.string());
  std::string line;
  if (!std::getline(is, line)) throw ValidationError(log_path.string() + ": empty training log");
  const auto header = corpus::split_csv(line);
  if (header != corpus::split_csv(objectives::log_header(blocks)))
    throw ValidationError(log_path.string() + ": log header does not match a " + std::to_string(blocks) +
                          "-block model");
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = corpus::split_csv(line);
    if (cells.size() != header.size()) throw ValidationError(log_path.string() + ": malformed log row");
    std::vector<double> r;
    for (int l = 0; l < blocks; ++l) r.push_back(config::parse_double("log", cells[2 + l]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError(log_path.string() + ": training log has no rows");
  const std::size_t begin = rows.size() > window ? rows.size() - window : 0;
  std::vector<double> mean(static_cast<std::size_t>(blocks), 0.0);
  for (std::size_t i = begin; i < rows.size(); ++i)
    for (int l = 0; l < blocks; ++l) mean[l] += rows[i][l] / static_cast<double>(rows.size() - begin);
  return mean;
}

struct EnhanceOptions {
  fs::path checkpoint;
  fs::path input;      // single-file mode
  fs::path output;
  fs::path manifest;   // batch mode: every row's `path`, written to out_dir/<id>.wav
  fs::path out_dir;
  std::string blocks;  // empty: all; "auto": select from the training log; else a number
  fs::path log;
  fs::path probes;     // per-block CSV + WAV exports (single-file mode)
  fs::path spectrum;   // CSV of the synthesized 512-bin log spectrum
};

inline void write_spectrum_csv(const fs::path& path, const LogSpectrogram& s) {
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os << std::setprecision(9);
  for (Eigen::Index t = 0; t < s.num_frames(); ++t) {
    for (Eigen::Index k = 0; k < s.bands(); ++k) os << (k ? "," : "") << s.frames(t, k);
    os << "\n";
  }
  if (!os) throw RuntimeFailure("write failed: " + path.string());
}

inline std::optional<int> resolve_blocks(const EnhanceOptions& o, const ModelConfig& m, std::ostream& log) {
  if (o.blocks.empty()) return std::nullopt;
  if (o.blocks == "auto") {
    require(!o.log.empty(), "--blocks auto needs --log <training log>");
    const auto costs = logged_block_costs(o.log, m.blocks);
    const int l = net::select_depth(costs);
    log << "selected " << l << " of " << m.blocks << " blocks from " << o.log.string() << "\n";
    return l;
  }
  const long l = config::parse_long("--blocks", o.blocks);
  require(l >= 1 && l <= m.blocks, "--blocks must lie in [1, " + std::to_string(m.blocks) + "]");
  return static_cast<int>(l);
}

inline void cmd_enhance(const EnhanceOptions& o, std::ostream& log = std::cout) {
  const bool batch = !o.manifest.empty();
  require(batch != !o.input.empty(), "give either --in/--out or --manifest/--out-dir");
  require(!batch || !o.out_dir.empty(), "--manifest needs --out-dir");
  require(batch || !o.output.empty(), "--in needs --out");
  require(!batch || o.probes.empty(), "--probes applies to single-file mode");
  auto model = net::load_model(o.checkpoint);
  const auto blocks = resolve_blocks(o, model.config, log);

  if (!batch) {
    const auto in = corpus::read_wav(o.input);
    auto e = pipeline::enhance_waveform(model, in, blocks, !o.probes.empty());
    if (o.output.has_parent_path()) fs::create_directories(o.output.parent_path());
    corpus::write_wav(o.output, e.wav);
    if (!o.spectrum.empty()) write_spectrum_csv(o.spectrum, e.spectrum);
    if (!o.probes.empty()) {
      fs::create_directories(o.probes);
      for (std::size_t l = 0; l < e.probe_wavs.size(); ++l) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "probe_%02zu", l + 1);
        write_spectrum_csv(o.probes / (std::string(stem) + ".csv"), e.probe_spectra[l]);
        corpus::write_wav(o.probes / (std::string(stem) + ".wav"), e.probe_wavs[l]);
      }
    }
    return;
  }

  const auto rows = corpus::read_manifest(o.manifest);
  const auto base = o.manifest.parent_path();
  std::vector<Waveform> inputs;
  for (const auto& r : rows) inputs.push_back(corpus::read_wav(resolve(base, r.path)));
  fs::create_directories(o.out_dir);
  for (std::size_t i = 0; i < rows.size(); ++i)
    corpus::write_wav(o.out_dir / (rows[i].id + ".wav"), pipeline::enhance_waveform(model, inputs[i], blocks).wav);
  log << "enhanced " << rows.size() << " utterances into " << o.out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  fs::path manifest;
  fs::path enhanced_dir;
  fs::path report;   // per-utterance CSV; empty: not written
  fs::path summary;  // per-condition CSV; empty: not written
  bool check_direction = false;
};

struct Evaluation {
  std::vector<pipeline::ScoredUtterance> enhanced;
  std::vector<pipeline::ScoredUtterance> unprocessed;
  std::vector<pipeline::ConditionSummary> enhanced_summary;
  std::vector<pipeline::ConditionSummary> unprocessed_summary;
  bool direction_ok = true;
};

inline Evaluation cmd_evaluate(const EvaluateOptions& o, std::ostream& log = std::cout) {
  const auto rows = corpus::read_manifest(o.manifest);
  const auto base = o.manifest.parent_path();
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.clean_path.empty()) missing.push_back("row " + std::to_string(i + 1) + " (" + r.id + "): no clean_path");
    else if (!fs::exists(resolve(base, r.clean_path))) missing.push_back(resolve(base, r.clean_path).string());
    if (!fs::exists(resolve(base, r.path))) missing.push_back(resolve(base, r.path).string());
    if (!fs::exists(o.enhanced_dir / (r.id + ".wav"))) missing.push_back((o.enhanced_dir / (r.id + ".wav")).string());
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " required file(s) missing:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }

  Evaluation ev;
  ev.enhanced.resize(rows.size());
  ev.unprocessed.resize(rows.size());
  pipeline::parallel_for(rows.size(), [&](std::size_t i) {
    const auto& r = rows[i];
    const auto clean = corpus::read_wav(resolve(base, r.clean_path));
    const auto noisy = corpus::read_wav(resolve(base, r.path));
    const auto enh = corpus::read_wav(o.enhanced_dir / (r.id + ".wav"));
    ev.enhanced[i] = {r.id, r.condition, quality::assess(clean, enh)};
    ev.unprocessed[i] = {r.id, r.condition, quality::assess(clean, noisy)};
  });
  ev.enhanced_summary = pipeline::summarize(ev.enhanced);
  ev.unprocessed_summary = pipeline::summarize(ev.unprocessed);

  if (!o.report.empty()) {
    std::ofstream os(o.report);
    if (!os) throw RuntimeFailure("cannot open " + o.report.string() + " for writing");
    os << "id,condition,llr,srmr,n_active_frames\n" << std::setprecision(9);
    for (const auto& s : ev.enhanced)
      os << s.id << ',' << s.condition << ',' << s.report.llr << ',' << s.report.srmr << ','
         << s.report.n_active_frames << "\n";
  }
  std::ostringstream table;
  table << "condition,count,llr,srmr,unprocessed_llr,unprocessed_srmr\n" << std::setprecision(6);
  for (std::size_t c = 0; c < ev.enhanced_summary.size(); ++c) {
    const auto& e = ev.enhanced_summary[c];
    const auto& u = ev.unprocessed_summary[c];
    table << e.condition << ',' << e.count << ',' << e.mean_llr << ',' << e.mean_srmr << ',' << u.mean_llr << ','
          << u.mean_srmr << "\n";
    if (!(e.mean_srmr > u.mean_srmr)) ev.direction_ok = false;
  }
  log << table.str();
  if (!o.summary.empty()) {
    std::ofstream os(o.summary);
    if (!os) throw RuntimeFailure("cannot open " + o.summary.string() + " for writing");
    os << table.str();
  }
  if (o.check_direction && !ev.direction_ok)
    throw RuntimeFailure("directional check failed: enhanced mean SRMR does not exceed unprocessed in every condition");
  return ev;
}

// ---------------------------------------------------------------------------
// gradcheck

inline bool cmd_gradcheck(std::ostream& log = std::cout, double tolerance = 1e-4) {
  bool ok = true;
  for (const auto& c : gradcheck::run_suite()) {
    const bool pass = c.result.max_rel_error < tolerance;
    ok &= pass;
    log << (pass ? "ok   " : "FAIL ") << c.name << ": max relative error " << std::setprecision(3)
        << c.result.max_rel_error << " over " << c.result.checked << " entries\n";
  }
  return ok;
}

}  // namespace ccrn::cli
