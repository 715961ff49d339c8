#pragma once

// Training objectives and the optimizer.
//
// J(Y, X) is the mean squared log-spectral difference over all bands and
// frames. Progressive supervision adds the same cost at every block output:
//
//   J_PS = J(Y, X_L) + alpha * (1/L) * sum_{l=1..L} J(Y, X_l)
//
// with the final block counted in both terms.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccrn/corpus.hpp"
#include "ccrn/diffcore.hpp"
#include "ccrn/error.hpp"
#include "ccrn/frontend.hpp"
#include "ccrn/netmodel.hpp"

namespace ccrn {

enum class Objective { progressive, final_only };

struct TrainConfig {
  double alpha = 0.1;
  int seq_len = 200;
  int batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;
  long steps = 1000;
  std::uint64_t seed = 1;
  Objective objective = Objective::progressive;
  bool exclude_last_block = false;  // ablation: drop l = L from the progressive sum
  long checkpoint_every = 0;        // 0: only at the end

  void validate() const {
    require(alpha >= 0.0, "train.alpha must be >= 0");
    require(seq_len >= 2, "train.seq_len must be >= 2");
    require(batch_size >= 1, "train.batch_size must be >= 1");
    require(lr > 0.0, "train.lr must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "AdamW betas must lie in [0, 1)");
    require(epsilon > 0.0, "train.epsilon must be > 0");
    require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    require(steps >= 0, "train.steps must be >= 0");
  }
};

template <class S>
struct OptimizerState {
  std::vector<diff::Mat<S>> m;
  std::vector<diff::Mat<S>> v;
  long step = 0;
};

struct CostReport {
  double total = 0.0;
  double main = 0.0;
  std::vector<double> per_block;
};

namespace objectives {

using diff::Index;

/// Mean squared difference of two equally shaped spectrograms.
inline double cost_J(const LogSpectrogram& y, const LogSpectrogram& x) {
  require(y.frames.rows() == x.frames.rows() && y.frames.cols() == x.frames.cols(),
          "cost_J: shape mismatch");
  require(y.frames.size() > 0, "cost_J: empty spectrogram");
  return (y.frames - x.frames).squaredNorm() / static_cast<double>(y.frames.size());
}

template <class S>
diff::Var<S> cost_J(const diff::Var<S>& y, const diff::Var<S>& x) {
  return diff::mse(x, y);
}

template <class S>
struct ProgressiveCost {
  diff::Var<S> total;
  diff::Var<S> main;
  std::vector<diff::Var<S>> per_block;

  CostReport report() const {
    CostReport r{static_cast<double>(total.item()), static_cast<double>(main.item()), {}};
    for (const auto& p : per_block) r.per_block.push_back(static_cast<double>(p.item()));
    return r;
  }
};

template <class S>
ProgressiveCost<S> cost_JPS(const diff::Var<S>& y, const std::vector<diff::Var<S>>& probes, double alpha,
                            bool exclude_last = false) {
  require(!probes.empty(), "cost_JPS: empty probe trace");
  ProgressiveCost<S> c;
  for (const auto& p : probes) c.per_block.push_back(cost_J(y, p));
  c.main = c.per_block.back();
  const std::size_t L = probes.size();
  const std::size_t summed = exclude_last && L > 1 ? L - 1 : L;
  std::vector<diff::Var<S>> terms{c.main};
  std::vector<S> weights{S(1)};
  for (std::size_t l = 0; l < summed; ++l) {
    terms.push_back(c.per_block[l]);
    weights.push_back(static_cast<S>(alpha / static_cast<double>(L)));
  }
  c.total = diff::weighted_sum<S>(terms, weights);
  return c;
}

/// Value-only form over numeric per-block costs.
inline double progressive_total(const std::vector<double>& per_block, double alpha) {
  require(!per_block.empty(), "progressive_total: empty cost list");
  double sum = 0.0;
  for (double j : per_block) sum += j;
  return per_block.back() + alpha * sum / static_cast<double>(per_block.size());
}

// ---------------------------------------------------------------------------
// AdamW

template <class S>
void init_optimizer(OptimizerState<S>& st, const std::vector<diff::Var<S>>& params) {
  st.m.clear();
  st.v.clear();
  for (const auto& p : params) {
    st.m.push_back(diff::Mat<S>::Zero(p.value().rows(), p.value().cols()));
    st.v.push_back(diff::Mat<S>::Zero(p.value().rows(), p.value().cols()));
  }
  st.step = 0;
}

/// One bias-corrected Adam update with decoupled weight decay
/// (theta <- theta * (1 - lr*wd) before the gradient step).
template <class S>
void adamw_step(std::vector<diff::Var<S>>& params, OptimizerState<S>& st, const TrainConfig& cfg) {
  if (st.m.size() != params.size()) init_optimizer(st, params);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i].grad().allFinite())
      throw RuntimeFailure("AdamW: non-finite gradient in parameter " + std::to_string(i) + " at step " +
                           std::to_string(st.step + 1));
  ++st.step;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.epsilon);
  const S decay = S(1) - lr * static_cast<S>(cfg.weight_decay);
  const S c1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(st.step)));
  const S c2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(st.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const diff::Mat<S>& g = params[i].grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    m = b1 * m + (S(1) - b1) * g;
    v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
    auto& theta = params[i].mutable_value();
    if (cfg.weight_decay != 0.0) theta *= decay;
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// On-the-fly examples

/// Clean utterances plus the corruption conditions sampled during training.
struct TrainingCorpus {
  std::vector<Waveform> utterances;
  std::vector<double> rt60s{0.25, 0.5, 0.7};
  std::vector<double> drrs{5.0, -5.0};
  double snr_db = 20.0;
  NoiseKind noise = NoiseKind::speech_shaped;
};

struct Example {
  FeatureSequence features;  // T x 876
  LogSpectrogram target;     // T x C_S
};

inline std::size_t segment_samples(int frames) {
  return static_cast<std::size_t>((frames - 1) * frontend::kHop + frontend::kStreams.back().window / 2 +
                                  frontend::kBaseWindow / 2);
}

/// Deterministic in (cfg.seed, index): utterance, span, and corruption.
inline Example sample_example(const TrainingCorpus& corpus, const TrainConfig& cfg, std::uint64_t index, int bands) {
  require(!corpus.utterances.empty(), "training corpus is empty");
  require(!corpus.rt60s.empty() && !corpus.drrs.empty(), "training corpus needs rt60 and drr choices");
  const std::size_t seg = segment_samples(cfg.seq_len);
  std::mt19937_64 rng(corpus::mix_seed(cfg.seed, index));
  constexpr int kMaxTries = 64;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    const Waveform& clean = corpus.utterances[rng() % corpus.utterances.size()];
    const auto rt60 = corpus.rt60s[rng() % corpus.rt60s.size()];
    const auto drr = corpus.drrs[rng() % corpus.drrs.size()];
    CorruptionSpec spec{{rt60, drr, 0, rng()}, corpus.snr_db, corpus.noise, rng()};
    const std::uint64_t pick = rng();
    if (clean.size() < seg) continue;  // too short: resample
    const std::size_t start = static_cast<std::size_t>(pick % (clean.size() - seg + 1));

    const Waveform noisy = corpus::corrupt_span(clean, spec, start, seg);
    Waveform clean_seg{{clean.samples.begin() + static_cast<long>(start),
                        clean.samples.begin() + static_cast<long>(start + seg)},
                       clean.sample_rate};
    auto analysis = frontend::assemble_features(noisy);
    auto target = frontend::clean_target(clean_seg, bands);
    analysis.features.frames.conservativeResize(cfg.seq_len, Eigen::NoChange);
    target.frames.conservativeResize(cfg.seq_len, Eigen::NoChange);
    return {std::move(analysis.features), std::move(target)};
  }
  throw ValidationError("no utterance long enough for " + std::to_string(cfg.seq_len) + " frames");
}

struct Batch {
  diff::Mat<float> input;   // 876 x (B*T)
  diff::Mat<float> target;  // C_S x (B*T)
  Index size = 0;
};

inline Batch make_batch(const TrainingCorpus& corpus, const TrainConfig& cfg, long step, int bands) {
  const Index B = cfg.batch_size, T = cfg.seq_len;
  Batch b{diff::Mat<float>(kFeatureDim, B * T), diff::Mat<float>(bands, B * T), B};
  for (Index i = 0; i < B; ++i) {
    const auto ex = sample_example(corpus, cfg, static_cast<std::uint64_t>(step) * B + i, bands);
    b.input.middleCols(i * T, T) = net::to_network(ex.features.frames);
    b.target.middleCols(i * T, T) = net::to_network(ex.target.frames);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training

template <class S>
CostReport train_step(ModelParams<S>& model, OptimizerState<S>& opt, const diff::Mat<S>& input,
                      const diff::Mat<S>& target, Index batch, const TrainConfig& cfg) {
  net::set_mode(model, diff::BnMode::training);
  auto params = net::parameters(model);
  for (auto& p : params) p.zero_grad();
  const auto x = diff::Var<S>::constant(input, batch);
  const auto y = diff::Var<S>::constant(target, batch);
  const auto fr = net::forward(model, x, true);

  CostReport report;
  if (cfg.objective == Objective::final_only) {
    const auto loss = cost_J(y, fr.output);
    diff::backprop(loss);
    report.total = report.main = static_cast<double>(loss.item());
    for (std::size_t l = 0; l < fr.probes.size(); ++l)
      report.per_block.push_back(l + 1 == fr.probes.size()
                                     ? report.main
                                     : static_cast<double>((fr.probes[l].value() - target).squaredNorm() /
                                                           static_cast<S>(target.size())));
  } else {
    const auto cost = cost_JPS(y, fr.probes, cfg.alpha, cfg.exclude_last_block);
    diff::backprop(cost.total);
    report = cost.report();
  }
  if (!std::isfinite(report.total))
    throw RuntimeFailure("training diverged at step " + std::to_string(opt.step + 1) + ": non-finite cost");
  adamw_step(params, opt, cfg);
  return report;
}

inline checkpoint::File training_checkpoint(ModelParams<float>& model, const OptimizerState<float>& opt) {
  auto f = net::to_checkpoint(model);
  f.header["optimizer.step"] = std::to_string(opt.step);
  const auto named = net::named_parameters(model);
  if (opt.m.size() == named.size()) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      f.arrays.push_back(net::to_array("adam.m." + named[i].first, named[i].second.shape(), opt.m[i]));
      f.arrays.push_back(net::to_array("adam.v." + named[i].first, named[i].second.shape(), opt.v[i]));
    }
  }
  return f;
}

struct TrainingState {
  ModelParams<float> model;
  OptimizerState<float> opt;
};

inline TrainingState from_training_checkpoint(const checkpoint::File& f) {
  TrainingState st{net::from_checkpoint<float>(f), {}};
  const auto it = f.header.find("optimizer.step");
  if (it == f.header.end()) return st;
  st.opt.step = std::stol(it->second);
  const auto named = net::named_parameters(st.model);
  for (const auto& [name, var] : named) {
    const auto* m = f.find("adam.m." + name);
    const auto* v = f.find("adam.v." + name);
    if (!m || !v) {
      if (st.opt.step == 0) break;
      throw ValidationError("checkpoint lacks optimizer moments for " + name);
    }
    st.opt.m.emplace_back(var.value().rows(), var.value().cols());
    st.opt.v.emplace_back(var.value().rows(), var.value().cols());
    net::from_array(*m, st.opt.m.back());
    net::from_array(*v, st.opt.v.back());
  }
  return st;
}

inline std::string log_header(int blocks) {
  std::string h = "step,total";
  for (int l = 1; l <= blocks; ++l) h += ",per_block_" + std::to_string(l);
  return h;
}

inline std::string log_row(long step, const CostReport& r) {
  std::ostringstream os;
  os << std::setprecision(9) << step << ',' << r.total;
  for (double j : r.per_block) os << ',' << j;
  return os.str();
}

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;  // rewritten every checkpoint_every steps and at the end
  std::ostream* log = nullptr;                      // CSV rows, header written when opt.step == 0
  std::function<void(long, const CostReport&)> on_step;
};

/// Runs updates until opt.step == cfg.steps. Resuming from a training
/// checkpoint continues the exact same trajectory.
inline std::vector<CostReport> train(ModelParams<float>& model, OptimizerState<float>& opt,
                                     const TrainingCorpus& corpus, const TrainConfig& cfg,
                                     const TrainOutputs& out = {}) {
  cfg.validate();
  require(kSpectrumBins % model.config.channels == 0, "model.channels must divide 512 to form the target");
  require(model.config.input_dim == kFeatureDim, "training needs the 876-dim front-end input");
  if (opt.m.empty()) init_optimizer(opt, net::parameters(model));
  if (out.log && opt.step == 0) *out.log << log_header(model.config.blocks) << "\n";

  std::vector<CostReport> history;
  while (opt.step < cfg.steps) {
    const long step = opt.step;
    const auto batch = make_batch(corpus, cfg, step, model.config.channels);
    CostReport r;
    try {
      r = train_step(model, opt, batch.input, batch.target, batch.size, cfg);
    } catch (const RuntimeFailure& e) {
      const std::string where = out.checkpoint ? " (last good checkpoint: " + out.checkpoint->string() + ")" : "";
      throw RuntimeFailure(e.what() + where);
    }
    if (out.log) *out.log << log_row(step, r) << "\n";
    if (out.on_step) out.on_step(step, r);
    history.push_back(std::move(r));
    const bool due = cfg.checkpoint_every > 0 && opt.step % cfg.checkpoint_every == 0;
    if (out.checkpoint && (due || opt.step == cfg.steps)) checkpoint::save(*out.checkpoint, training_checkpoint(model, opt));
  }
  if (out.log) out.log->flush();
  return history;
}

}  // namespace objectives
}  // namespace ccrn
