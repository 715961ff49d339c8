#pragma once

// Finite-difference checks of every differentiable piece, as run by
// `ccrn gradcheck`.

#include <random>
#include <string>
#include <vector>

#include "ccrn/diffcore.hpp"
#include "ccrn/netmodel.hpp"
#include "ccrn/objectives.hpp"

namespace ccrn::gradcheck {

struct Case {
  std::string name;
  diff::GradCheckResult result;
};

namespace detail {

inline diff::Mat<double> uniform(diff::Index r, diff::Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  diff::Mat<double> m(r, c);
  for (diff::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline diff::Var<double> leaf(diff::Mat<double> m, std::vector<diff::Index> shape = {}) {
  if (shape.empty()) shape = {m.rows(), m.cols()};
  return diff::Var<double>::parameter(diff::NdArray<double>(std::move(shape), std::move(m)));
}

}  // namespace detail

/// Layers at C=4, T=12; whole models at C_S=8, T=12 with the 876-dim input.
inline std::vector<Case> run_suite(std::uint64_t seed = 1) {
  using diff::Var;
  using detail::leaf;
  using detail::uniform;
  std::mt19937_64 rng(seed);
  const diff::Index C = 4, T = 12;
  std::vector<Case> out;
  const auto target = Var<double>::constant(uniform(C, T, rng));

  {
    auto x = leaf(uniform(C, T, rng));
    auto w = leaf(uniform(C, 3 * C, rng), {C, 3, C});
    auto b = leaf(uniform(C, 1, rng), {C});
    std::vector<Var<double>> p{x, w, b};
    out.push_back({"conv1d", diff::grad_check([&] { return diff::mse(diff::conv1d(x, w, b, 1), target); }, p)});
  }
  {
    auto x = leaf(uniform(C, T, rng));
    auto bn = diff::BatchNormState<double>::make(C);
    bn.gamma.mutable_value() = uniform(C, 1, rng, 0.5, 1.5);
    bn.beta.mutable_value() = uniform(C, 1, rng);
    std::vector<Var<double>> p{x, bn.gamma, bn.beta};
    out.push_back({"batchnorm1d", diff::grad_check([&] { return diff::mse(diff::batchnorm1d(x, bn), target); }, p)});
  }
  {
    auto x = leaf(uniform(C, T, rng));
    auto a = leaf(uniform(C, 1, rng, 0.1, 0.5), {C});
    std::vector<Var<double>> p{x, a};
    out.push_back({"prelu", diff::grad_check([&] { return diff::mse(diff::prelu(x, a), target); }, p)});
  }
  {
    auto x = leaf(uniform(C, T, rng));
    std::vector<Var<double>> p{x};
    out.push_back({"cost_J", diff::grad_check([&] { return objectives::cost_J(target, x); }, p)});
  }
  {
    std::vector<Var<double>> probes;
    for (int l = 0; l < 3; ++l) probes.push_back(leaf(uniform(C, T, rng)));
    out.push_back({"cost_JPS", diff::grad_check([&] { return objectives::cost_JPS(target, probes, 0.1).total; }, probes)});
  }
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.blocks = 2;
    cfg.channels = 8;
    auto model = net::build_model<double>(cfg, rng());
    // move BN and PReLU away from their initial values so every path is exercised
    for (auto& [name, v] : net::named_parameters(model)) {
      if (name.ends_with(".prelu")) v.mutable_value() = uniform(v.value().rows(), 1, rng, 0.1, 0.5);
      if (name.ends_with(".bn.gamma")) v.mutable_value() = uniform(v.value().rows(), 1, rng, 0.5, 1.5);
      if (name.ends_with(".bn.beta")) v.mutable_value() = uniform(v.value().rows(), 1, rng, -0.5, 0.5);
    }
    const auto x = Var<double>::constant(uniform(cfg.input_dim, T, rng));
    const auto y = Var<double>::constant(uniform(cfg.channels, T, rng));
    auto params = net::parameters(model);
    out.push_back({"2-block " + to_string(kind) + " with cost_JPS", diff::grad_check([&] {
                     const auto fr = net::forward(model, x, true);
                     return objectives::cost_JPS(y, fr.probes, 0.1).total;
                   },
                                                                                 params)});
  }
  return out;
}

}  // namespace ccrn::gradcheck
