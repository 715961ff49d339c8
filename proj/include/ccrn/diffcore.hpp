#pragma once

// Minimal reverse-mode differentiation over channel x frame matrices.
//
// Activations are stored as C x (B*T) column-major matrices: column b*T + t
// holds frame t of batch element b, so every frame is contiguous and a time
// shift within one batch element is a plain column offset. Convolution
// weights are C_out x (k*C_in) with tap j occupying columns [j*C_in, (j+1)*C_in).
//
// The layer set is exactly what the residual architectures need: conv1d,
// batchnorm1d, prelu, channel concatenation, addition and the MSE/mean
// reductions used by the costs.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ccrn/error.hpp"

namespace ccrn::diff {

using Index = Eigen::Index;

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Shaped array. `data` has shape[0] rows; the trailing dimensions are
/// flattened row-major into the columns.
template <class S>
struct NdArray {
  std::vector<Index> shape;
  Mat<S> data;

  NdArray() = default;
  NdArray(std::vector<Index> dims, Mat<S> values) : shape(std::move(dims)), data(std::move(values)) {
    Index n = 1;
    for (auto d : shape) n *= d;
    require(n == data.size(), "NdArray: shape does not match data size");
  }
  static NdArray zeros(std::vector<Index> dims) {
    const Index rows = dims.empty() ? 1 : dims[0];
    Index cols = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) cols *= dims[i];
    return NdArray(std::move(dims), Mat<S>::Zero(rows, cols));
  }
  Index numel() const { return data.size(); }
};

template <class S>
struct Node {
  Mat<S> value;
  Mat<S> grad;  // allocated on first use
  std::vector<Index> shape;
  Index batch = 1;
  const char* op = "leaf";
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  Mat<S>& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat<S>::Zero(value.rows(), value.cols());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Var parameter(NdArray<S> init) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(init.data);
    n->shape = std::move(init.shape);
    n->requires_grad = true;
    return Var(std::move(n));
  }
  /// Non-differentiable input of `batch` elements laid out C x (batch*T).
  static Var constant(Mat<S> value, Index batch = 1) {
    auto n = std::make_shared<Node<S>>();
    n->shape = {value.rows(), batch, value.cols() / std::max<Index>(batch, 1)};
    n->value = std::move(value);
    n->batch = batch;
    return Var(std::move(n));
  }

  const Mat<S>& value() const { return node_->value; }
  Mat<S>& mutable_value() { return node_->value; }
  /// Gradient, zero-filled if never written.
  const Mat<S>& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.size() > 0) node_->grad.setZero();
  }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index channels() const { return node_->value.rows(); }
  Index batch() const { return node_->batch; }
  Index frames() const { return node_->value.cols() / node_->batch; }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node<S>& node() const { return *node_; }
  const std::shared_ptr<Node<S>>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }
  S item() const {
    require(node_->value.size() == 1, "item() needs a scalar");
    return node_->value(0, 0);
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <class S>
Var<S> make_node(const char* op, Mat<S> value, Index batch, std::vector<Var<S>> inputs,
                 std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  n->op = op;
  n->shape = {value.rows(), batch, value.cols() / std::max<Index>(batch, 1)};
  n->value = std::move(value);
  n->batch = batch;
  for (auto& in : inputs) {
    n->requires_grad = n->requires_grad || in.requires_grad();
    n->parents.push_back(in.ptr());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Var<S>(std::move(n));
}

inline std::string dims(Index a, Index b) { return std::to_string(a) + "x" + std::to_string(b); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers

/// Cross-correlation along time, summed over input channels.
/// weight: C_out x (k*C_in), bias: C_out x 1. Output length T + 2*padding - k + 1.
template <class S>
Var<S> conv1d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias, Index padding) {
  const Index c_in = input.channels();
  const Index c_out = weight.value().rows();
  require(c_in > 0 && weight.value().cols() % c_in == 0,
          "conv1d: weight input width " + std::to_string(weight.value().cols()) + " incompatible with " +
              std::to_string(c_in) + " input channels");
  const Index k = weight.value().cols() / c_in;
  require(weight.shape().size() != 3 || (weight.shape()[1] == k && weight.shape()[2] == c_in),
          "conv1d: weight shape does not match input channels");
  require(bias.value().rows() == c_out && bias.value().cols() == 1, "conv1d: bias must be C_out x 1");
  require(padding >= 0, "conv1d: negative padding");
  const Index B = input.batch(), T = input.frames();
  const Index T_out = T + 2 * padding - k + 1;
  require(T_out >= 1, "conv1d: input shorter than kernel");

  // valid output-column range for tap j: input index t + j - padding in [0, T)
  auto range = [=](Index j) {
    const Index s = j - padding;
    const Index lo = std::max<Index>(0, -s);
    const Index hi = std::min<Index>(T_out, T - s);
    return std::tuple<Index, Index, Index>{s, lo, std::max<Index>(0, hi - lo)};
  };

  const Mat<S>& x = input.value();
  const Mat<S>& w = weight.value();
  Mat<S> out(c_out, B * T_out);
  out.colwise() = bias.value().col(0);
  for (Index j = 0; j < k; ++j) {
    const auto [s, lo, n] = range(j);
    if (n == 0) continue;
    const auto wj = w.middleCols(j * c_in, c_in);
    for (Index b = 0; b < B; ++b) out.middleCols(b * T_out + lo, n).noalias() += wj * x.middleCols(b * T + lo + s, n);
  }

  auto in_node = input.ptr(), w_node = weight.ptr(), b_node = bias.ptr();
  return detail::make_node<S>("conv1d", std::move(out), B, {input, weight, bias},
                              [=](Node<S>& self) {
                                const Mat<S>& dy = self.grad;
                                if (b_node->requires_grad) b_node->grad_buffer() += dy.rowwise().sum();
                                for (Index j = 0; j < k; ++j) {
                                  const auto [s, lo, n] = range(j);
                                  if (n == 0) continue;
                                  if (w_node->requires_grad) {
                                    auto dwj = w_node->grad_buffer().middleCols(j * c_in, c_in);
                                    for (Index b = 0; b < B; ++b)
                                      dwj.noalias() += dy.middleCols(b * T_out + lo, n) *
                                                       in_node->value.middleCols(b * T + lo + s, n).transpose();
                                  }
                                  if (in_node->requires_grad) {
                                    const auto wj = w_node->value.middleCols(j * c_in, c_in);
                                    auto& dx = in_node->grad_buffer();
                                    for (Index b = 0; b < B; ++b)
                                      dx.middleCols(b * T + lo + s, n).noalias() +=
                                          wj.transpose() * dy.middleCols(b * T_out + lo, n);
                                  }
                                }
                              });
}

enum class BnMode { training, inference };

template <class S>
struct BatchNormState {
  Var<S> gamma;
  Var<S> beta;
  Vec<S> running_mean;
  Vec<S> running_var;
  S momentum = S(0.1);
  S epsilon = S(1e-5);
  BnMode mode = BnMode::training;

  static BatchNormState make(Index channels) {
    BatchNormState st;
    st.gamma = Var<S>::parameter(NdArray<S>({channels}, Mat<S>::Ones(channels, 1)));
    st.beta = Var<S>::parameter(NdArray<S>({channels}, Mat<S>::Zero(channels, 1)));
    st.running_mean = Vec<S>::Zero(channels);
    st.running_var = Vec<S>::Ones(channels);
    return st;
  }
};

/// Per-channel normalization over batch and time jointly. Training mode uses
/// batch statistics and updates the running estimates (unbiased variance).
template <class S>
Var<S> batchnorm1d(const Var<S>& input, BatchNormState<S>& state) {
  const Index C = input.channels();
  const Index N = input.value().cols();
  require(state.gamma.value().rows() == C && state.beta.value().rows() == C,
          "batchnorm1d: state has " + std::to_string(state.gamma.value().rows()) + " channels, input has " +
              std::to_string(C));
  require(state.epsilon > S(0), "batchnorm1d: epsilon must be positive");
  const bool training = state.mode == BnMode::training;
  require(!training || N >= 2, "batchnorm1d: training mode needs at least 2 frames");

  const Mat<S>& x = input.value();
  Vec<S> mean, var;
  if (training) {
    mean = x.rowwise().mean();
    var = (x.colwise() - mean).array().square().rowwise().mean();
    state.running_mean = (S(1) - state.momentum) * state.running_mean + state.momentum * mean;
    state.running_var = (S(1) - state.momentum) * state.running_var +
                        state.momentum * var * (static_cast<S>(N) / static_cast<S>(N - 1));
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  const Vec<S> inv_std = (var.array() + state.epsilon).rsqrt();
  Mat<S> xhat = (x.colwise() - mean).array().colwise() * inv_std.array();
  Mat<S> out = (xhat.array().colwise() * state.gamma.value().col(0).array()).colwise() + state.beta.value().col(0).array();

  auto in_node = input.ptr(), g_node = state.gamma.ptr(), b_node = state.beta.ptr();
  return detail::make_node<S>(
      "batchnorm1d", std::move(out), input.batch(), {input, state.gamma, state.beta},
      [=, xhat = std::move(xhat)](Node<S>& self) {
        const Mat<S>& dy = self.grad;
        if (g_node->requires_grad) g_node->grad_buffer() += (dy.array() * xhat.array()).rowwise().sum().matrix();
        if (b_node->requires_grad) b_node->grad_buffer() += dy.rowwise().sum();
        if (!in_node->requires_grad) return;
        const Vec<S> scale = g_node->value.col(0).array() * inv_std.array();
        auto& dx = in_node->grad_buffer();
        if (training) {
          const Vec<S> mean_dy = dy.rowwise().mean();
          const Vec<S> mean_dy_xhat = (dy.array() * xhat.array()).rowwise().mean();
          dx.array() += ((dy.colwise() - mean_dy).array() - xhat.array().colwise() * mean_dy_xhat.array()).colwise() *
                        scale.array();
        } else {
          dx.array() += dy.array().colwise() * scale.array();
        }
      });
}

/// x if x > 0, slope_c * x otherwise. The kink takes the negative-branch slope.
template <class S>
Var<S> prelu(const Var<S>& input, const Var<S>& slope) {
  const Index C = input.channels();
  require(slope.value().rows() == C && slope.value().cols() == 1, "prelu: one slope per channel required");
  const Mat<S>& x = input.value();
  const auto a = slope.value().col(0).array();
  Mat<S> out = (x.array() > S(0)).select(x.array(), x.array().colwise() * a);

  auto in_node = input.ptr(), s_node = slope.ptr();
  return detail::make_node<S>("prelu", std::move(out), input.batch(), {input, slope}, [=](Node<S>& self) {
    const Mat<S>& dy = self.grad;
    const auto& xv = in_node->value;
    const auto positive = (xv.array() > S(0));
    if (s_node->requires_grad)
      s_node->grad_buffer() += positive.select(S(0), dy.array() * xv.array()).rowwise().sum().matrix();
    if (in_node->requires_grad) {
      const auto av = s_node->value.col(0).array();
      in_node->grad_buffer().array() +=
          positive.select(dy.array(), dy.array().colwise() * av);
    }
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require(a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols(),
          "add: shape mismatch " + detail::dims(a.value().rows(), a.value().cols()) + " vs " +
              detail::dims(b.value().rows(), b.value().cols()));
  auto an = a.ptr(), bn = b.ptr();
  return detail::make_node<S>("add", a.value() + b.value(), a.batch(), {a, b}, [=](Node<S>& self) {
    if (an->requires_grad) an->grad_buffer() += self.grad;
    if (bn->requires_grad) bn->grad_buffer() += self.grad;
  });
}

/// Stacks channels: [a; b]. Batch and frame counts must agree.
template <class S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  require(a.value().cols() == b.value().cols() && a.batch() == b.batch(), "concat_channels: frame layout mismatch");
  const Index ca = a.channels(), cb = b.channels();
  Mat<S> out(ca + cb, a.value().cols());
  out.topRows(ca) = a.value();
  out.bottomRows(cb) = b.value();
  auto an = a.ptr(), bn = b.ptr();
  return detail::make_node<S>("concat", std::move(out), a.batch(), {a, b}, [=](Node<S>& self) {
    if (an->requires_grad) an->grad_buffer() += self.grad.topRows(ca);
    if (bn->requires_grad) bn->grad_buffer() += self.grad.bottomRows(cb);
  });
}

/// Mean of all elements.
template <class S>
Var<S> mean(const Var<S>& a) {
  const S n = static_cast<S>(a.value().size());
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum() / n;
  auto an = a.ptr();
  return detail::make_node<S>("mean", std::move(out), 1, {a}, [=](Node<S>& self) {
    if (an->requires_grad) an->grad_buffer().array() += self.grad(0, 0) / n;
  });
}

/// Mean squared difference over all elements.
template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  require(a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols(),
          "mse: shape mismatch " + detail::dims(a.value().rows(), a.value().cols()) + " vs " +
              detail::dims(b.value().rows(), b.value().cols()));
  const S n = static_cast<S>(a.value().size());
  Mat<S> diff = a.value() - b.value();
  Mat<S> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  auto an = a.ptr(), bn = b.ptr();
  return detail::make_node<S>("mse", std::move(out), 1, {a, b}, [=, diff = std::move(diff)](Node<S>& self) {
    const S g = S(2) * self.grad(0, 0) / n;
    if (an->requires_grad) an->grad_buffer() += g * diff;
    if (bn->requires_grad) bn->grad_buffer() -= g * diff;
  });
}

/// sum_i coeffs[i] * terms[i] over scalar nodes, accumulated in order.
template <class S>
Var<S> weighted_sum(std::span<const Var<S>> terms, std::span<const S> coeffs) {
  require(!terms.empty() && terms.size() == coeffs.size(), "weighted_sum: need matching non-empty terms and weights");
  Mat<S> out = Mat<S>::Zero(1, 1);
  std::vector<Var<S>> inputs(terms.begin(), terms.end());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += coeffs[i] * terms[i].value()(0, 0);
  }
  std::vector<S> c(coeffs.begin(), coeffs.end());
  return detail::make_node<S>("weighted_sum", std::move(out), 1, std::move(inputs), [c](Node<S>& self) {
    for (std::size_t i = 0; i < c.size(); ++i)
      if (self.parents[i]->requires_grad) self.parents[i]->grad_buffer().array() += c[i] * self.grad(0, 0);
  });
}

// ---------------------------------------------------------------------------
// Backpropagation

/// Nodes reachable from `root` in post-order (parents before children),
/// visiting parents in insertion order.
template <class S>
std::vector<Node<S>*> topological_order(Node<S>& root) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

/// Accumulates d(loss)/d(leaf) into every reachable differentiable leaf.
/// Interior gradients are reset, so calling twice doubles leaf gradients.
template <class S>
void backprop(const Var<S>& loss) {
  require(loss.value().size() == 1, "backprop: loss must be a scalar, got " +
                                        detail::dims(loss.value().rows(), loss.value().cols()));
  Node<S>& root = loss.node();
  if (!root.requires_grad) return;
  const auto order = topological_order(root);
  for (Node<S>* n : order)
    if (!n->is_leaf()) n->grad = Mat<S>::Zero(n->value.rows(), n->value.cols());
  root.grad_buffer()(0, 0) += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf() && (*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Initialization

/// Conv weights (and bias) uniform in +-sqrt(1/(C_in*k)).
template <class S>
std::pair<Var<S>, Var<S>> init_conv(Index c_out, Index c_in, Index k, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(c_in * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat<S> w(c_out, k * c_in), b(c_out, 1);
  for (Index r = 0; r < w.rows(); ++r)
    for (Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<S>(dist(rng));
  for (Index r = 0; r < c_out; ++r) b(r, 0) = static_cast<S>(dist(rng));
  return {Var<S>::parameter(NdArray<S>({c_out, k, c_in}, std::move(w))),
          Var<S>::parameter(NdArray<S>({c_out}, std::move(b)))};
}

template <class S>
Var<S> init_prelu(Index channels) {
  return Var<S>::parameter(NdArray<S>({channels}, Mat<S>::Constant(channels, 1, S(0.25))));
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error with an absolute floor so vanishing gradients compare by
/// absolute difference.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences against backprop for every element of `params`.
/// `loss_fn` must rebuild the graph from the current parameter values.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss_fn, std::span<Var<double>> params,
                                  double h = 1e-5) {
  require(h > 0.0, "grad_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  const Var<double> loss = loss_fn();
  const double f0 = loss.item();
  const double f0_again = loss_fn().item();
  require(f0 == f0_again || (std::isnan(f0) && std::isnan(f0_again)),
          "grad_check: loss builder is not deterministic");
  backprop(loss);

  GradCheckResult res;
  for (auto& p : params) {
    const Mat<double> analytic = p.grad();
    Mat<double>& theta = p.mutable_value();
    for (Index i = 0; i < theta.size(); ++i) {
      const double saved = theta.data()[i];
      theta.data()[i] = saved + h;
      const double fp = loss_fn().item();
      theta.data()[i] = saved - h;
      const double fm = loss_fn().item();
      theta.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic.data()[i], numeric));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace ccrn::diff
