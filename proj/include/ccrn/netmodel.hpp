#pragma once

// Constant-channel residual networks.
//
// A first convolution maps the input features to C_S channels; L residual
// blocks then refine that C_S-channel representation, and the value on the
// residual path after each block is a probe output in the target domain.
//
//   ccrn        residual' = residual + conv(prelu(bn(conv(prelu(bn(residual))))))
//   ccrn-state  inner     = prelu(bn(conv(prelu(bn([residual; state])))))
//               residual' = residual + conv_res(inner),  state' = conv_state(inner)
//
// State widths grow as C_l = state_step * l, with no state entering block 1.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ccrn/checkpoint.hpp"
#include "ccrn/diffcore.hpp"
#include "ccrn/error.hpp"
#include "ccrn/frontend.hpp"

namespace ccrn {

enum class ModelKind { ccrn, ccrn_state };

inline std::string to_string(ModelKind k) { return k == ModelKind::ccrn ? "ccrn" : "ccrn-state"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "ccrn") return ModelKind::ccrn;
  if (s == "ccrn-state" || s == "ccrn_state") return ModelKind::ccrn_state;
  throw ValidationError("unknown model kind '" + s + "' (expected ccrn or ccrn-state)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::ccrn;
  int blocks = 14;
  int channels = kSpectrumBins;  // C_S, also the target band count
  int state_step = 32;
  int kernel = 3;
  int first_kernel = 3;
  int input_dim = kFeatureDim;

  int state_width(int l) const { return kind == ModelKind::ccrn_state ? state_step * l : 0; }

  void validate() const {
    require(blocks >= 1, "model.blocks must be >= 1");
    require(channels >= 1, "model.channels must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, "model.kernel must be odd");
    require(first_kernel >= 1 && first_kernel % 2 == 1, "model.first_kernel must be odd");
    require(input_dim >= 1, "model.input_dim must be >= 1");
    require(kind != ModelKind::ccrn_state || state_step >= 1, "ccrn-state requires model.state_step >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct ConvParams {
  diff::Var<S> weight;
  diff::Var<S> bias;
};

/// BN -> PReLU, optionally followed by a convolution.
template <class S>
struct Stage {
  diff::BatchNormState<S> bn;
  diff::Var<S> slope;
  ConvParams<S> conv;  // empty in the second stage of a ccrn-state block
};

template <class S>
struct BlockParams {
  Stage<S> stage1;
  Stage<S> stage2;
  ConvParams<S> out_res;    // ccrn-state only
  ConvParams<S> out_state;  // ccrn-state only
};

template <class S>
struct ModelParams {
  ModelConfig config;
  ConvParams<S> first_layer;
  std::vector<BlockParams<S>> blocks;
};

using ProbeTrace = std::vector<LogSpectrogram>;

namespace net {

using diff::Index;

template <class S>
ConvParams<S> make_conv(Index c_out, Index c_in, Index k, std::mt19937_64& rng) {
  auto [w, b] = diff::init_conv<S>(c_out, c_in, k, rng);
  return {std::move(w), std::move(b)};
}

template <class S>
Stage<S> make_stage(Index channels, Index conv_out, Index k, std::mt19937_64& rng) {
  Stage<S> s{diff::BatchNormState<S>::make(channels), diff::init_prelu<S>(channels), {}};
  if (conv_out > 0) s.conv = make_conv<S>(conv_out, channels, k, rng);
  return s;
}

template <class S>
ModelParams<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<S> m{cfg, make_conv<S>(cfg.channels, cfg.input_dim, cfg.first_kernel, rng), {}};
  const Index cs = cfg.channels;
  for (int l = 1; l <= cfg.blocks; ++l) {
    BlockParams<S> b;
    if (cfg.kind == ModelKind::ccrn) {
      b.stage1 = make_stage<S>(cs, cs, cfg.kernel, rng);
      b.stage2 = make_stage<S>(cs, cs, cfg.kernel, rng);
    } else {
      const Index inner = cfg.state_width(l);
      b.stage1 = make_stage<S>(cs + cfg.state_width(l - 1), inner, cfg.kernel, rng);
      b.stage2 = make_stage<S>(inner, 0, cfg.kernel, rng);
      b.out_res = make_conv<S>(cs, inner, cfg.kernel, rng);
      b.out_state = make_conv<S>(inner, inner, cfg.kernel, rng);
    }
    m.blocks.push_back(std::move(b));
  }
  return m;
}

/// Visits every learnable array in a fixed order with a stable name.
template <class S, class F>
void for_each_parameter(const ModelParams<S>& m, F&& f) {
  auto conv = [&](const std::string& p, const ConvParams<S>& c) {
    if (!c.weight) return;
    f(p + ".weight", c.weight);
    f(p + ".bias", c.bias);
  };
  auto stage = [&](const std::string& p, const Stage<S>& s) {
    f(p + ".bn.gamma", s.bn.gamma);
    f(p + ".bn.beta", s.bn.beta);
    f(p + ".prelu", s.slope);
    conv(p + ".conv", s.conv);
  };
  conv("first", m.first_layer);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l + 1);
    stage(p + ".stage1", m.blocks[l].stage1);
    stage(p + ".stage2", m.blocks[l].stage2);
    conv(p + ".out_res", m.blocks[l].out_res);
    conv(p + ".out_state", m.blocks[l].out_state);
  }
}

template <class S>
std::vector<std::pair<std::string, diff::Var<S>>> named_parameters(const ModelParams<S>& m) {
  std::vector<std::pair<std::string, diff::Var<S>>> out;
  for_each_parameter(m, [&](const std::string& n, const diff::Var<S>& v) { out.emplace_back(n, v); });
  return out;
}

template <class S>
std::vector<diff::Var<S>> parameters(const ModelParams<S>& m) {
  std::vector<diff::Var<S>> out;
  for_each_parameter(m, [&](const std::string&, const diff::Var<S>& v) { out.push_back(v); });
  return out;
}

template <class S>
std::size_t parameter_count(const ModelParams<S>& m) {
  std::size_t n = 0;
  for_each_parameter(m, [&](const std::string&, const diff::Var<S>& v) { n += static_cast<std::size_t>(v.value().size()); });
  return n;
}

/// BN running statistics, in the same order as the blocks.
template <class S, class F>
void for_each_bn(ModelParams<S>& m, F&& f) {
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l + 1);
    f(p + ".stage1.bn", m.blocks[l].stage1.bn);
    f(p + ".stage2.bn", m.blocks[l].stage2.bn);
  }
}

template <class S>
void set_mode(ModelParams<S>& m, diff::BnMode mode) {
  for_each_bn(m, [&](const std::string&, diff::BatchNormState<S>& bn) { bn.mode = mode; });
}

template <class S>
void zero_grad(const ModelParams<S>& m) {
  for_each_parameter(m, [](const std::string&, diff::Var<S> v) { v.zero_grad(); });
}

/// Deep copy with freshly allocated parameter nodes.
template <class S>
ModelParams<S> clone(const ModelParams<S>& m) {
  ModelParams<S> out = m;
  auto fresh = [](diff::Var<S>& v) {
    if (v) v = diff::Var<S>::parameter(diff::NdArray<S>(v.shape(), v.value()));
  };
  auto conv = [&](ConvParams<S>& c) {
    fresh(c.weight);
    fresh(c.bias);
  };
  auto stage = [&](Stage<S>& s) {
    fresh(s.bn.gamma);
    fresh(s.bn.beta);
    fresh(s.slope);
    conv(s.conv);
  };
  conv(out.first_layer);
  for (auto& b : out.blocks) {
    stage(b.stage1);
    stage(b.stage2);
    conv(b.out_res);
    conv(b.out_state);
  }
  return out;
}

template <class S>
diff::Var<S> apply_conv(const ConvParams<S>& c, const diff::Var<S>& x) {
  const Index k = c.weight.value().cols() / x.channels();
  return diff::conv1d(x, c.weight, c.bias, (k - 1) / 2);
}

template <class S>
diff::Var<S> apply_stage(Stage<S>& s, const diff::Var<S>& x) {
  auto y = diff::prelu(diff::batchnorm1d(x, s.bn), s.slope);
  return s.conv.weight ? apply_conv(s.conv, y) : y;
}

template <class S>
struct BlockOutput {
  diff::Var<S> residual;
  diff::Var<S> state;  // empty for ccrn
};

template <class S>
BlockOutput<S> block_forward(BlockParams<S>& block, ModelKind kind, const diff::Var<S>& residual,
                             const diff::Var<S>& state) {
  if (kind == ModelKind::ccrn) {
    require(!state, "ccrn blocks take no state input");
    require(residual.channels() == block.stage1.bn.gamma.value().rows(), "block input channel mismatch");
    auto correction = apply_stage(block.stage2, apply_stage(block.stage1, residual));
    return {diff::add(residual, correction), {}};
  }
  const auto expected = block.stage1.bn.gamma.value().rows();
  const auto given = residual.channels() + (state ? state.channels() : 0);
  require(given == expected, "ccrn-state block expects " + std::to_string(expected) + " input channels, got " +
                                 std::to_string(given));
  const auto stacked = state ? diff::concat_channels(residual, state) : residual;
  auto inner = apply_stage(block.stage2, apply_stage(block.stage1, stacked));
  return {diff::add(residual, apply_conv(block.out_res, inner)), apply_conv(block.out_state, inner)};
}

template <class S>
struct ForwardResult {
  diff::Var<S> output;
  std::vector<diff::Var<S>> probes;  // residual path after each block
};

/// input: input_dim x (batch*T); output and probes: C_S x (batch*T).
template <class S>
ForwardResult<S> forward(ModelParams<S>& model, const diff::Var<S>& input, bool want_probes = true) {
  require(input.channels() == model.config.input_dim, "feature width " + std::to_string(input.channels()) +
                                                          " does not match model input_dim " +
                                                          std::to_string(model.config.input_dim));
  ForwardResult<S> res;
  diff::Var<S> residual = apply_conv(model.first_layer, input);
  diff::Var<S> state;
  for (auto& block : model.blocks) {
    auto out = block_forward(block, model.config.kind, residual, state);
    residual = std::move(out.residual);
    state = std::move(out.state);
    if (want_probes) res.probes.push_back(residual);
  }
  res.output = residual;
  return res;
}

template <class S>
ModelParams<S> truncate(const ModelParams<S>& model, int l) {
  require(l >= 1 && l <= model.config.blocks,
          "truncation depth " + std::to_string(l) + " outside [1, " + std::to_string(model.config.blocks) + "]");
  ModelParams<S> out = clone(model);
  out.blocks.resize(static_cast<std::size_t>(l));
  out.config.blocks = l;
  return out;
}

/// Smallest depth after which the next block improves the cost by less than
/// `threshold` relative; the full depth when every block helps enough.
inline int select_depth(const std::vector<double>& per_block_cost, double threshold = 0.01) {
  require(!per_block_cost.empty(), "select_depth: empty cost table");
  for (std::size_t l = 0; l + 1 < per_block_cost.size(); ++l) {
    const double cur = per_block_cost[l];
    const double gain = cur > 0 ? (cur - per_block_cost[l + 1]) / cur : 0.0;
    if (gain < threshold) return static_cast<int>(l + 1);
  }
  return static_cast<int>(per_block_cost.size());
}

// ---------------------------------------------------------------------------
// Whole-utterance inference

inline diff::Mat<float> to_network(const Matrix& frames) { return frames.transpose().cast<float>(); }

inline LogSpectrogram from_network(const diff::Mat<float>& m) { return {m.transpose().cast<double>()}; }

struct Enhancement {
  LogSpectrogram output;
  ProbeTrace probes;
};

/// Inference-mode forward over one utterance's features.
inline Enhancement enhance(ModelParams<float>& model, const FeatureSequence& feats, bool want_probes) {
  require(feats.frames.cols() == model.config.input_dim, "feature width mismatch");
  set_mode(model, diff::BnMode::inference);
  const auto input = diff::Var<float>::constant(to_network(feats.frames));
  const auto fr = forward(model, input, want_probes);
  Enhancement e{from_network(fr.output.value()), {}};
  for (const auto& p : fr.probes) e.probes.push_back(from_network(p.value()));
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline std::map<std::string, std::string> config_header(const ModelConfig& c) {
  return {{"model.kind", to_string(c.kind)},
          {"model.blocks", std::to_string(c.blocks)},
          {"model.channels", std::to_string(c.channels)},
          {"model.state_step", std::to_string(c.state_step)},
          {"model.kernel", std::to_string(c.kernel)},
          {"model.first_kernel", std::to_string(c.first_kernel)},
          {"model.input_dim", std::to_string(c.input_dim)}};
}

inline ModelConfig config_from_header(const std::map<std::string, std::string>& h) {
  auto get = [&](const std::string& k) {
    const auto it = h.find(k);
    if (it == h.end()) throw ValidationError("checkpoint header lacks " + k);
    return it->second;
  };
  ModelConfig c;
  try {
    c.kind = parse_model_kind(get("model.kind"));
    c.blocks = std::stoi(get("model.blocks"));
    c.channels = std::stoi(get("model.channels"));
    c.state_step = std::stoi(get("model.state_step"));
    c.kernel = std::stoi(get("model.kernel"));
    c.first_kernel = std::stoi(get("model.first_kernel"));
    c.input_dim = std::stoi(get("model.input_dim"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ValidationError*>(&e)) throw;
    throw ValidationError(std::string("checkpoint header has a malformed number: ") + e.what());
  }
  c.validate();
  return c;
}

template <class M>
checkpoint::Array to_array(const std::string& name, const std::vector<Index>& shape, const M& data) {
  checkpoint::Array a{name, {}, {}};
  for (auto d : shape) a.dims.push_back(static_cast<std::uint32_t>(d));
  a.values.reserve(static_cast<std::size_t>(data.size()));
  for (Index r = 0; r < data.rows(); ++r)
    for (Index c = 0; c < data.cols(); ++c) a.values.push_back(static_cast<float>(data(r, c)));
  return a;
}

template <class M>
void from_array(const checkpoint::Array& a, M& data) {
  using S = typename M::Scalar;
  require(a.values.size() == static_cast<std::size_t>(data.size()),
          "checkpoint array " + a.name + " has " + std::to_string(a.values.size()) + " values, expected " +
              std::to_string(data.size()));
  std::size_t i = 0;
  for (Index r = 0; r < data.rows(); ++r)
    for (Index c = 0; c < data.cols(); ++c) data(r, c) = static_cast<S>(a.values[i++]);
}

/// Parameters plus BN running statistics.
template <class S>
checkpoint::File to_checkpoint(ModelParams<S>& m) {
  checkpoint::File f;
  f.header = config_header(m.config);
  for_each_parameter(m, [&](const std::string& n, const diff::Var<S>& v) {
    f.arrays.push_back(to_array(n, v.shape(), v.value()));
  });
  for_each_bn(m, [&](const std::string& n, diff::BatchNormState<S>& bn) {
    const Index c = bn.running_mean.size();
    f.arrays.push_back(to_array(n + ".running_mean", {c}, bn.running_mean));
    f.arrays.push_back(to_array(n + ".running_var", {c}, bn.running_var));
  });
  return f;
}

template <class S>
ModelParams<S> from_checkpoint(const checkpoint::File& f) {
  auto m = build_model<S>(config_from_header(f.header), 0);
  auto need = [&](const std::string& n) -> const checkpoint::Array& {
    const auto* a = f.find(n);
    if (!a) throw ValidationError("checkpoint lacks array " + n);
    return *a;
  };
  for_each_parameter(m, [&](const std::string& n, diff::Var<S> v) {
    const auto& a = need(n);
    require(a.dims.size() == v.shape().size(), "checkpoint array " + n + " has wrong rank");
    for (std::size_t d = 0; d < a.dims.size(); ++d)
      require(a.dims[d] == static_cast<std::uint32_t>(v.shape()[d]), "checkpoint array " + n + " has wrong shape");
    from_array(a, v.mutable_value());
  });
  for_each_bn(m, [&](const std::string& n, diff::BatchNormState<S>& bn) {
    from_array(need(n + ".running_mean"), bn.running_mean);
    from_array(need(n + ".running_var"), bn.running_var);
  });
  return m;
}

inline void save_model(const std::filesystem::path& path, ModelParams<float>& m) {
  checkpoint::save(path, to_checkpoint(m));
}

inline ModelParams<float> load_model(const std::filesystem::path& path) {
  return from_checkpoint<float>(checkpoint::load(path));
}

}  // namespace net
}  // namespace ccrn
