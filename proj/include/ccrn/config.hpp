#pragma once

// Flat key=value run configuration. Blank lines and lines starting with '#'
// are ignored; every other line must be `key = value` with a known key.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ccrn/error.hpp"
#include "ccrn/netmodel.hpp"
#include "ccrn/objectives.hpp"

namespace ccrn {

struct CorpusConfig {
  std::vector<double> rt60{0.25, 0.5, 0.7};
  std::vector<double> drr_db{5.0, -5.0};
  double snr_db = 20.0;
  NoiseKind noise = NoiseKind::speech_shaped;
  int utterances = 20;  // clean utterances synthesized (per condition for `synth`)
  double duration_s = 3.0;
  std::uint64_t seed = 1;
};

struct PathConfig {
  std::string corpus;  // manifest of clean training audio; empty: synthesize from corpus.*
  std::string checkpoint = "ccrn.ckpt";
  std::string log = "train_log.csv";
  std::string out_dir = "corpus";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;
  PathConfig paths;
  long log_every = 100;

  void validate() const;
};

namespace config {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ValidationError(key + ": expected a number, got '" + v + "'");
}

inline long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long n = std::stol(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw ValidationError(key + ": expected an integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& cell : corpus::split_csv(v)) out.push_back(parse_double(key, trim(cell)));
  if (out.empty()) throw ValidationError(key + ": empty list");
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + corpus::format_number(v[i]);
  return s;
}

struct Key {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<Key>& keys() {
  using R = RunConfig;
  using S = const std::string&;
  static const std::vector<Key> k{
      {"model.kind", "ccrn | ccrn-state", [](R& c, S v) { c.model.kind = parse_model_kind(v); },
       [](const R& c) { return to_string(c.model.kind); }},
      {"model.blocks", "number of residual blocks L", [](R& c, S v) { c.model.blocks = static_cast<int>(parse_long("model.blocks", v)); },
       [](const R& c) { return std::to_string(c.model.blocks); }},
      {"model.channels", "residual width C_S (divides 512)", [](R& c, S v) { c.model.channels = static_cast<int>(parse_long("model.channels", v)); },
       [](const R& c) { return std::to_string(c.model.channels); }},
      {"model.state_step", "ccrn-state width increment per block", [](R& c, S v) { c.model.state_step = static_cast<int>(parse_long("model.state_step", v)); },
       [](const R& c) { return std::to_string(c.model.state_step); }},
      {"model.kernel", "block kernel size", [](R& c, S v) { c.model.kernel = static_cast<int>(parse_long("model.kernel", v)); },
       [](const R& c) { return std::to_string(c.model.kernel); }},
      {"model.first_kernel", "input layer kernel size", [](R& c, S v) { c.model.first_kernel = static_cast<int>(parse_long("model.first_kernel", v)); },
       [](const R& c) { return std::to_string(c.model.first_kernel); }},
      {"train.alpha", "progressive supervision weight", [](R& c, S v) { c.train.alpha = parse_double("train.alpha", v); },
       [](const R& c) { return corpus::format_number(c.train.alpha); }},
      {"train.objective", "progressive | final_only",
       [](R& c, S v) {
         if (v == "progressive") c.train.objective = Objective::progressive;
         else if (v == "final_only") c.train.objective = Objective::final_only;
         else throw ValidationError("train.objective: expected progressive or final_only, got '" + v + "'");
       },
       [](const R& c) { return std::string(c.train.objective == Objective::progressive ? "progressive" : "final_only"); }},
      {"train.exclude_last_block", "drop the final block from the progressive sum", [](R& c, S v) { c.train.exclude_last_block = parse_bool("train.exclude_last_block", v); },
       [](const R& c) { return std::string(c.train.exclude_last_block ? "true" : "false"); }},
      {"train.seq_len", "frames per training segment", [](R& c, S v) { c.train.seq_len = static_cast<int>(parse_long("train.seq_len", v)); },
       [](const R& c) { return std::to_string(c.train.seq_len); }},
      {"train.batch_size", "segments per step", [](R& c, S v) { c.train.batch_size = static_cast<int>(parse_long("train.batch_size", v)); },
       [](const R& c) { return std::to_string(c.train.batch_size); }},
      {"train.lr", "AdamW learning rate", [](R& c, S v) { c.train.lr = parse_double("train.lr", v); },
       [](const R& c) { return corpus::format_number(c.train.lr); }},
      {"train.beta1", "AdamW beta1", [](R& c, S v) { c.train.beta1 = parse_double("train.beta1", v); },
       [](const R& c) { return corpus::format_number(c.train.beta1); }},
      {"train.beta2", "AdamW beta2", [](R& c, S v) { c.train.beta2 = parse_double("train.beta2", v); },
       [](const R& c) { return corpus::format_number(c.train.beta2); }},
      {"train.epsilon", "AdamW epsilon", [](R& c, S v) { c.train.epsilon = parse_double("train.epsilon", v); },
       [](const R& c) { return corpus::format_number(c.train.epsilon); }},
      {"train.weight_decay", "decoupled weight decay", [](R& c, S v) { c.train.weight_decay = parse_double("train.weight_decay", v); },
       [](const R& c) { return corpus::format_number(c.train.weight_decay); }},
      {"train.steps", "total optimizer steps", [](R& c, S v) { c.train.steps = parse_long("train.steps", v); },
       [](const R& c) { return std::to_string(c.train.steps); }},
      {"train.seed", "seed for initialization and example sampling", [](R& c, S v) { c.train.seed = static_cast<std::uint64_t>(parse_long("train.seed", v)); },
       [](const R& c) { return std::to_string(c.train.seed); }},
      {"train.checkpoint_every", "steps between checkpoints (0: end only)", [](R& c, S v) { c.train.checkpoint_every = parse_long("train.checkpoint_every", v); },
       [](const R& c) { return std::to_string(c.train.checkpoint_every); }},
      {"train.log_every", "steps between console summaries", [](R& c, S v) { c.log_every = parse_long("train.log_every", v); },
       [](const R& c) { return std::to_string(c.log_every); }},
      {"corpus.rt60", "comma-separated rt60 values (s)", [](R& c, S v) { c.corpus.rt60 = parse_list("corpus.rt60", v); },
       [](const R& c) { return format_list(c.corpus.rt60); }},
      {"corpus.drr_db", "comma-separated direct-to-reverberant ratios (dB)", [](R& c, S v) { c.corpus.drr_db = parse_list("corpus.drr_db", v); },
       [](const R& c) { return format_list(c.corpus.drr_db); }},
      {"corpus.snr_db", "noise level below the reverberant signal (inf: none)", [](R& c, S v) { c.corpus.snr_db = parse_double("corpus.snr_db", v); },
       [](const R& c) { return corpus::format_number(c.corpus.snr_db); }},
      {"corpus.noise", "speech_shaped | white",
       [](R& c, S v) {
         if (v == "speech_shaped") c.corpus.noise = NoiseKind::speech_shaped;
         else if (v == "white") c.corpus.noise = NoiseKind::white;
         else throw ValidationError("corpus.noise: expected speech_shaped or white, got '" + v + "'");
       },
       [](const R& c) { return std::string(c.corpus.noise == NoiseKind::white ? "white" : "speech_shaped"); }},
      {"corpus.utterances", "number of synthesized clean utterances", [](R& c, S v) { c.corpus.utterances = static_cast<int>(parse_long("corpus.utterances", v)); },
       [](const R& c) { return std::to_string(c.corpus.utterances); }},
      {"corpus.duration_s", "length of each synthesized utterance", [](R& c, S v) { c.corpus.duration_s = parse_double("corpus.duration_s", v); },
       [](const R& c) { return corpus::format_number(c.corpus.duration_s); }},
      {"corpus.seed", "seed of the synthesized corpus", [](R& c, S v) { c.corpus.seed = static_cast<std::uint64_t>(parse_long("corpus.seed", v)); },
       [](const R& c) { return std::to_string(c.corpus.seed); }},
      {"paths.corpus", "manifest of clean training audio (empty: synthesize)", [](R& c, S v) { c.paths.corpus = v; },
       [](const R& c) { return c.paths.corpus; }},
      {"paths.checkpoint", "checkpoint written by train", [](R& c, S v) { c.paths.checkpoint = v; },
       [](const R& c) { return c.paths.checkpoint; }},
      {"paths.log", "training log CSV", [](R& c, S v) { c.paths.log = v; }, [](const R& c) { return c.paths.log; }},
      {"paths.out_dir", "output directory of synth", [](R& c, S v) { c.paths.out_dir = v; },
       [](const R& c) { return c.paths.out_dir; }},
  };
  return k;
}

inline void set(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : keys())
    if (k.name == key) return k.set(cfg, value);
  throw ValidationError("unknown configuration key '" + key + "'");
}

/// Applies one `key=value` assignment.
inline void apply(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
  set(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

inline RunConfig parse(std::istream& is, const std::string& where = "config") {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply(cfg, t);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config " + path.string());
  return parse(is, path.string());
}

/// Every key with its current value, one per line, in parse() format.
inline std::string dump(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace config

inline void RunConfig::validate() const {
  model.validate();
  train.validate();
  require(kSpectrumBins % model.channels == 0, "model.channels must divide 512");
  require(!corpus.rt60.empty() && !corpus.drr_db.empty(), "corpus.rt60 and corpus.drr_db need at least one value");
  for (double r : corpus.rt60) require(r >= 0.0 && std::isfinite(r), "corpus.rt60 values must be finite and >= 0");
  for (double d : corpus.drr_db) require(std::isfinite(d), "corpus.drr_db values must be finite");
  require(!std::isnan(corpus.snr_db), "corpus.snr_db must be a number");
  require(corpus.utterances >= 1, "corpus.utterances must be >= 1");
  require(corpus.duration_s > 0.1, "corpus.duration_s must exceed 0.1");
  require(log_every >= 1, "train.log_every must be >= 1");
}

}  // namespace ccrn
