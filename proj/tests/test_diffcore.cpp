#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ccrn/diffcore.hpp"
#include "ccrn/netmodel.hpp"
#include "test_support.hpp"

using namespace ccrn;
using diff::Mat;
using diff::Var;
using oracle::random_matrix;

namespace {

Var<double> param(Mat<double> m) {
  const auto r = m.rows(), c = m.cols();
  return Var<double>::parameter(diff::NdArray<double>({r, c}, std::move(m)));
}

Var<double> conv_weight(Mat<double> m, diff::Index k) {
  const auto r = m.rows(), c = m.cols() / k;
  return Var<double>::parameter(diff::NdArray<double>({r, k, c}, std::move(m)));
}

}  // namespace

TEST(Conv1d, IdentityKernel) {
  auto x = Var<double>::constant((Mat<double>(1, 4) << 1, 2, 3, 4).finished());
  auto w = conv_weight((Mat<double>(1, 3) << 0, 1, 0).finished(), 3);
  auto b = param(Mat<double>::Zero(1, 1));
  const auto y = diff::conv1d(x, w, b, 1);
  EXPECT_EQ(y.value(), x.value());
}

TEST(Conv1d, ZeroKernelGivesZero) {
  std::mt19937_64 rng(3);
  auto x = Var<double>::constant(random_matrix(3, 7, rng));
  auto w = conv_weight(Mat<double>::Zero(2, 9), 3);
  auto b = param(Mat<double>::Zero(2, 1));
  EXPECT_TRUE((diff::conv1d(x, w, b, 1).value().array() == 0.0).all());
}

TEST(Conv1d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(11);
  const Mat<double> xv = random_matrix(2, 4, rng), wv = random_matrix(1, 6, rng), bv = random_matrix(1, 1, rng);
  const auto y = diff::conv1d(Var<double>::constant(xv), conv_weight(wv, 3), param(bv), 1);
  const auto expect = oracle::conv1d_oracle(xv, wv, bv, 3, 1);
  EXPECT_LT((y.value() - expect).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Conv1d, OracleProperty) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> ch(1, 4), len(1, 16), kern(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int c_in = ch(rng), c_out = ch(rng), T = len(rng), k = 2 * kern(rng) + 1;
    if (T + (k - 1) - k + 1 < 1) continue;
    const Mat<double> xv = random_matrix(c_in, T, rng), wv = random_matrix(c_out, k * c_in, rng),
                      bv = random_matrix(c_out, 1, rng);
    const auto y = diff::conv1d(Var<double>::constant(xv), conv_weight(wv, k), param(bv), (k - 1) / 2);
    ASSERT_EQ(y.value().cols(), T);
    EXPECT_LT((y.value() - oracle::conv1d_oracle(xv, wv, bv, k, (k - 1) / 2)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Conv1d, IdentityKernelProperty) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int C = 1 + trial % 4, T = 1 + trial % 16;
    Mat<double> w = Mat<double>::Zero(C, 3 * C);
    w.middleCols(C, C).setIdentity();
    const auto xv = random_matrix(C, T, rng, -100, 100);
    const auto y = diff::conv1d(Var<double>::constant(xv), conv_weight(w, 3), param(Mat<double>::Zero(C, 1)), 1);
    EXPECT_EQ(y.value(), xv);
  }
}

TEST(Conv1d, BatchElementsDoNotMix) {
  std::mt19937_64 rng(14);
  const Mat<double> a = random_matrix(2, 5, rng), b = random_matrix(2, 5, rng);
  Mat<double> both(2, 10);
  both << a, b;
  const auto w = conv_weight(random_matrix(3, 6, rng), 3);
  const auto bias = param(random_matrix(3, 1, rng));
  const auto batched = diff::conv1d(Var<double>::constant(both, 2), w, bias, 1);
  EXPECT_EQ(batched.value().leftCols(5), diff::conv1d(Var<double>::constant(a), w, bias, 1).value());
  EXPECT_EQ(batched.value().rightCols(5), diff::conv1d(Var<double>::constant(b), w, bias, 1).value());
}

TEST(Conv1d, RejectsChannelMismatch) {
  auto x = Var<double>::constant(Mat<double>::Zero(3, 5));
  auto w = conv_weight(Mat<double>::Zero(2, 3 * 2), 3);
  auto b = param(Mat<double>::Zero(2, 1));
  EXPECT_THROW(diff::conv1d(x, w, b, 1), ValidationError);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  auto st = diff::BatchNormState<double>::make(2);
  st.beta.mutable_value() << 0.5, -1.5;
  Mat<double> x(2, 6);
  x.row(0).setConstant(3.0);
  x.row(1).setConstant(-7.0);
  const auto y = diff::batchnorm1d(Var<double>::constant(x), st);
  EXPECT_TRUE((y.value().row(0).array() == 0.5).all());
  EXPECT_TRUE((y.value().row(1).array() == -1.5).all());
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  std::mt19937_64 rng(21);
  Mat<double> x = random_matrix(3, 40, rng);
  // standardize by hand so each row has zero mean and unit (biased) variance
  for (int c = 0; c < 3; ++c) {
    const double m = x.row(c).mean();
    x.row(c).array() -= m;
    x.row(c) /= std::sqrt(x.row(c).squaredNorm() / 40.0);
  }
  auto st = diff::BatchNormState<double>::make(3);
  const auto y = diff::batchnorm1d(Var<double>::constant(x), st);
  EXPECT_LT((y.value() - x).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(BatchNorm, InferenceWithIdentityStatistics) {
  std::mt19937_64 rng(22);
  const Mat<double> x = random_matrix(4, 9, rng);
  auto st = diff::BatchNormState<double>::make(4);
  st.mode = diff::BnMode::inference;
  const auto y = diff::batchnorm1d(Var<double>::constant(x), st);
  EXPECT_LT((y.value() - x / std::sqrt(1.0 + 1e-5)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BatchNorm, TrainingStatisticsProperty) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = 1 + trial % 5, T = 64 + 7 * trial;
    auto st = diff::BatchNormState<double>::make(C);
    st.beta.mutable_value() = random_matrix(C, 1, rng);
    const auto y = diff::batchnorm1d(Var<double>::constant(random_matrix(C, T, rng, -3, 5)), st);
    for (int c = 0; c < C; ++c) {
      const double m = y.value().row(c).mean();
      EXPECT_NEAR(m, st.beta.value()(c, 0), 1e-5);
      EXPECT_NEAR((y.value().row(c).array() - m).square().mean(), 1.0, 1e-3);
    }
  }
}

TEST(BatchNorm, UpdatesRunningStatistics) {
  auto st = diff::BatchNormState<double>::make(1);
  const Mat<double> x = (Mat<double>(1, 4) << 1, 2, 3, 4).finished();
  diff::batchnorm1d(Var<double>::constant(x), st);
  EXPECT_NEAR(st.running_mean(0), 0.1 * 2.5, 1e-15);
  // unbiased variance of {1,2,3,4} is 5/3
  EXPECT_NEAR(st.running_var(0), 0.9 + 0.1 * 5.0 / 3.0, 1e-15);
}

TEST(BatchNorm, TrainingNeedsTwoFrames) {
  auto st = diff::BatchNormState<double>::make(2);
  EXPECT_THROW(diff::batchnorm1d(Var<double>::constant(Mat<double>::Zero(2, 1)), st), ValidationError);
  st.mode = diff::BnMode::inference;
  EXPECT_NO_THROW(diff::batchnorm1d(Var<double>::constant(Mat<double>::Zero(2, 1)), st));
}

TEST(Prelu, Definition) {
  auto slope = param((Mat<double>(1, 1) << 0.25).finished());
  const auto y = diff::prelu(Var<double>::constant((Mat<double>(1, 3) << 5, -2, 0).finished()), slope);
  EXPECT_EQ(y.value()(0, 0), 5.0);
  EXPECT_EQ(y.value()(0, 1), -0.5);
  EXPECT_EQ(y.value()(0, 2), 0.0);
}

TEST(Prelu, UnitSlopeIsIdentity) {
  std::mt19937_64 rng(31);
  const auto x = random_matrix(3, 20, rng, -5, 5);
  const auto y = diff::prelu(Var<double>::constant(x), param(Mat<double>::Ones(3, 1)));
  EXPECT_EQ(y.value(), x);
}

TEST(Prelu, KinkUsesNegativeSlope) {
  auto x = param(Mat<double>::Zero(1, 1));
  auto slope = param((Mat<double>(1, 1) << 0.3).finished());
  diff::backprop(diff::mean(diff::prelu(x, slope)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.3);
}

TEST(Backprop, Square) {
  auto x = param((Mat<double>(1, 1) << 3.0).finished());
  diff::backprop(diff::mse(x, Var<double>::constant(Mat<double>::Zero(1, 1))));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Backprop, MeanOfSum) {
  std::mt19937_64 rng(41);
  auto a = param(random_matrix(3, 4, rng)), b = param(random_matrix(3, 4, rng));
  diff::backprop(diff::mean(diff::add(a, b)));
  EXPECT_TRUE((a.grad().array() == 1.0 / 12.0).all());
  EXPECT_TRUE((b.grad().array() == 1.0 / 12.0).all());
}

TEST(Backprop, AccumulatesAcrossCalls) {
  auto x = param((Mat<double>(1, 1) << 3.0).finished());
  const auto loss = diff::mse(x, Var<double>::constant(Mat<double>::Zero(1, 1)));
  diff::backprop(loss);
  diff::backprop(loss);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(Backprop, SharedSubexpression) {
  auto x = param((Mat<double>(1, 1) << 2.0).finished());
  const auto twice = diff::add(x, x);
  diff::backprop(diff::mean(diff::add(twice, x)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 3.0);
}

TEST(Backprop, RejectsNonScalarLoss) {
  auto x = param(Mat<double>::Ones(2, 2));
  EXPECT_THROW(diff::backprop(diff::add(x, x)), ValidationError);
}

TEST(GradCheck, LinearLayerWithMse) {
  std::mt19937_64 rng(51);
  auto w = conv_weight(random_matrix(3, 4, rng), 1);
  auto b = param(random_matrix(3, 1, rng));
  const auto x = Var<double>::constant(random_matrix(4, 6, rng));
  const auto y = Var<double>::constant(random_matrix(3, 6, rng));
  std::vector<Var<double>> params{w, b};
  const auto res = diff::grad_check([&] { return diff::mse(diff::conv1d(x, w, b, 0), y); }, params);
  EXPECT_LT(res.max_rel_error, 1e-6);
  EXPECT_EQ(res.checked, 15u);
}

TEST(GradCheck, PreluAwayFromKink) {
  std::mt19937_64 rng(52);
  Mat<double> xv = random_matrix(3, 10, rng);
  for (diff::Index i = 0; i < xv.size(); ++i) xv.data()[i] += xv.data()[i] >= 0 ? 0.1 : -0.1;
  auto x = param(xv);
  auto slope = param(random_matrix(3, 1, rng, 0.05, 0.5));
  const auto y = Var<double>::constant(random_matrix(3, 10, rng));
  std::vector<Var<double>> params{x, slope};
  const auto res = diff::grad_check([&] { return diff::mse(diff::prelu(x, slope), y); }, params);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(GradCheck, ZeroLossIsZeroError) {
  auto x = param(Mat<double>::Ones(2, 3));
  std::vector<Var<double>> params{x};
  const auto zero = Var<double>::constant(Mat<double>::Zero(1, 1));
  const auto res = diff::grad_check([&] { return diff::mse(zero, zero); }, params);
  EXPECT_EQ(res.max_rel_error, 0.0);
  EXPECT_FALSE(std::isnan(res.max_rel_error));
}

TEST(GradCheck, RejectsNonDeterministicBuilder) {
  auto x = param(Mat<double>::Ones(1, 1));
  std::vector<Var<double>> params{x};
  std::mt19937_64 rng(1);
  auto builder = [&] { return diff::mse(x, Var<double>::constant(random_matrix(1, 1, rng))); };
  EXPECT_THROW(diff::grad_check(builder, params), ValidationError);
}

TEST(GradCheck, EveryLayer) {
  std::mt19937_64 rng(53);
  const diff::Index C = 3, T = 12;
  auto x = param(random_matrix(C, T, rng));
  auto w = conv_weight(random_matrix(C, 3 * C, rng), 3);
  auto b = param(random_matrix(C, 1, rng));
  auto bn = diff::BatchNormState<double>::make(C);
  bn.gamma.mutable_value() = random_matrix(C, 1, rng, 0.5, 1.5);
  bn.beta.mutable_value() = random_matrix(C, 1, rng);
  auto other = param(random_matrix(2, T, rng));
  const auto y = Var<double>::constant(random_matrix(C + 2, T, rng));
  std::vector<Var<double>> params{x, w, b, bn.gamma, bn.beta, other};
  const auto res = diff::grad_check(
      [&] { return diff::mse(diff::concat_channels(diff::add(diff::conv1d(diff::batchnorm1d(x, bn), w, b, 1), x), other), y); },
      params);
  EXPECT_LT(res.max_rel_error, 1e-4);
  bn.mode = diff::BnMode::inference;
  EXPECT_LT(diff::grad_check([&] { return diff::mse(diff::batchnorm1d(x, bn), Var<double>::constant(y.value().topRows(C))); },
                             params)
                .max_rel_error,
            1e-4);
}

TEST(GradCheck, TwoBlockCcrnMatchesFiniteDifferences) {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 8;
  cfg.input_dim = 8;
  auto model = net::build_model<double>(cfg, 7);
  std::mt19937_64 rng(61);
  const auto x = Var<double>::constant(random_matrix(8, 12, rng));
  const auto y = Var<double>::constant(random_matrix(8, 12, rng));
  auto params = net::parameters(model);
  const auto res = diff::grad_check([&] { return diff::mse(net::forward(model, x, false).output, y); }, params);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Backprop, BitDeterministic) {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 6;
  cfg.input_dim = 5;
  auto run = [&] {
    auto model = net::build_model<double>(cfg, 9);
    std::mt19937_64 rng(62);
    const auto x = Var<double>::constant(random_matrix(5, 20, rng));
    const auto y = Var<double>::constant(random_matrix(6, 20, rng));
    diff::backprop(diff::mse(net::forward(model, x, false).output, y));
    std::vector<Mat<double>> grads;
    for (const auto& p : net::parameters(model)) grads.push_back(p.grad());
    return grads;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}
