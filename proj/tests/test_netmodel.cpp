#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ccrn/netmodel.hpp"
#include "test_support.hpp"

using namespace ccrn;
using diff::Mat;
using diff::Var;

namespace {

ModelConfig small(ModelKind kind, int blocks = 3, int channels = 16) {
  ModelConfig c;
  c.kind = kind;
  c.blocks = blocks;
  c.channels = channels;
  c.state_step = 4;
  c.input_dim = 24;
  return c;
}

Var<double> random_input(const ModelConfig& c, diff::Index frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Var<double>::constant(oracle::random_matrix<double>(c.input_dim, frames, rng));
}

void zero_block(BlockParams<double>& b) {
  for (auto* conv : {&b.stage1.conv, &b.stage2.conv, &b.out_res, &b.out_state}) {
    if (!conv->weight) continue;
    conv->weight.mutable_value().setZero();
    conv->bias.mutable_value().setZero();
  }
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ccrn_test_netmodel";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Build, ParameterCountClosedForm) {
  ModelConfig c;
  const auto m = net::build_model<float>(c, 1);
  const std::size_t want = 876u * 512 * 3 + 512 + 14u * 2 * (512u * 512 * 3 + 512 + 2 * 512 + 512);
  EXPECT_EQ(net::parameter_count(m), want);
}

TEST(Build, StateWidthsGrowBy32) {
  ModelConfig c;
  c.kind = ModelKind::ccrn_state;
  c.blocks = 5;
  const auto m = net::build_model<float>(c, 1);
  EXPECT_EQ(m.blocks[0].stage1.bn.gamma.value().rows(), 512);
  for (int l = 1; l <= 5; ++l) {
    const auto& b = m.blocks[l - 1];
    EXPECT_EQ(c.state_width(l), 32 * l);
    EXPECT_EQ(b.stage1.conv.weight.shape()[0], 32 * l);
    EXPECT_EQ(b.stage1.bn.gamma.value().rows(), 512 + 32 * (l - 1));
    EXPECT_EQ(b.out_res.weight.shape()[0], 512);
    EXPECT_EQ(b.out_state.weight.shape()[0], 32 * l);
  }
}

TEST(Build, SeedDeterminism) {
  const auto a = net::build_model<float>(small(ModelKind::ccrn_state), 7);
  const auto b = net::build_model<float>(small(ModelKind::ccrn_state), 7);
  const auto c = net::build_model<float>(small(ModelKind::ccrn_state), 8);
  const auto pa = net::parameters(a), pb = net::parameters(b), pc = net::parameters(c);
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].value(), pb[i].value());
    differs |= pa[i].value() != pc[i].value();
  }
  EXPECT_TRUE(differs);
}

TEST(Build, InvalidConfigRejected) {
  ModelConfig c;
  c.blocks = 0;
  EXPECT_THROW(net::build_model<float>(c, 1), ValidationError);
  c = {};
  c.kernel = 2;
  EXPECT_THROW(net::build_model<float>(c, 1), ValidationError);
  EXPECT_THROW(parse_model_kind("resnet"), ValidationError);
}

TEST(Block, ZeroCorrectionIsIdentity) {
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    auto m = net::build_model<double>(small(kind), 3);
    zero_block(m.blocks[0]);
    std::mt19937_64 rng(1);
    const auto x = Var<double>::constant(oracle::random_matrix<double>(16, 20, rng));
    const auto out = net::block_forward(m.blocks[0], kind, x, {});
    EXPECT_EQ(out.residual.value(), x.value());
  }
}

TEST(Block, PreservesFrameCount) {
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    auto m = net::build_model<double>(small(kind), 2);
    const auto r = net::forward(m, random_input(m.config, 200, 2));
    EXPECT_EQ(r.output.frames(), 200);
    EXPECT_EQ(r.output.channels(), 16);
  }
}

TEST(Block, MatchesManualComposition) {
  auto m = net::build_model<double>(small(ModelKind::ccrn), 4);
  std::mt19937_64 rng(5);
  const auto x = Var<double>::constant(oracle::random_matrix<double>(16, 30, rng));
  auto& b = m.blocks[0];
  auto bn1 = diff::BatchNormState<double>::make(16), bn2 = diff::BatchNormState<double>::make(16);
  bn1.gamma = b.stage1.bn.gamma;
  bn1.beta = b.stage1.bn.beta;
  bn2.gamma = b.stage2.bn.gamma;
  bn2.beta = b.stage2.bn.beta;
  auto h = diff::conv1d(diff::prelu(diff::batchnorm1d(x, bn1), b.stage1.slope), b.stage1.conv.weight,
                        b.stage1.conv.bias, 1);
  h = diff::conv1d(diff::prelu(diff::batchnorm1d(h, bn2), b.stage2.slope), b.stage2.conv.weight, b.stage2.conv.bias, 1);
  const Mat<double> want = x.value() + h.value();
  const auto got = net::block_forward(b, ModelKind::ccrn, x, {});
  EXPECT_LT((got.residual.value() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Block, StateBlockMatchesManualComposition) {
  auto m = net::build_model<double>(small(ModelKind::ccrn_state), 4);
  std::mt19937_64 rng(6);
  const auto x = Var<double>::constant(oracle::random_matrix<double>(16, 30, rng));
  const auto s = Var<double>::constant(oracle::random_matrix<double>(4, 30, rng));
  auto& b = m.blocks[1];
  auto bn1 = diff::BatchNormState<double>::make(20), bn2 = diff::BatchNormState<double>::make(8);
  bn1.gamma = b.stage1.bn.gamma;
  bn1.beta = b.stage1.bn.beta;
  bn2.gamma = b.stage2.bn.gamma;
  bn2.beta = b.stage2.bn.beta;
  auto h = diff::conv1d(diff::prelu(diff::batchnorm1d(diff::concat_channels(x, s), bn1), b.stage1.slope),
                        b.stage1.conv.weight, b.stage1.conv.bias, 1);
  h = diff::prelu(diff::batchnorm1d(h, bn2), b.stage2.slope);
  const Mat<double> res = x.value() + diff::conv1d(h, b.out_res.weight, b.out_res.bias, 1).value();
  const Mat<double> st = diff::conv1d(h, b.out_state.weight, b.out_state.bias, 1).value();
  const auto got = net::block_forward(b, ModelKind::ccrn_state, x, s);
  EXPECT_LT((got.residual.value() - res).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((got.state.value() - st).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, LastProbeIsOutput) {
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    auto m = net::build_model<double>(small(kind), 9);
    const auto r = net::forward(m, random_input(m.config, 25, 3));
    ASSERT_EQ(r.probes.size(), 3u);
    EXPECT_EQ(r.probes.back().value(), r.output.value());
  }
}

TEST(Forward, ZeroedBlockRepeatsPreviousProbe) {
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    for (int l = 1; l < 3; ++l) {
      auto m = net::build_model<double>(small(kind), 10);
      zero_block(m.blocks[l]);
      const auto r = net::forward(m, random_input(m.config, 25, 4));
      EXPECT_EQ(r.probes[l].value(), r.probes[l - 1].value()) << "block " << l + 1;
    }
  }
}

TEST(Forward, KindsShareOutputShape) {
  auto a = net::build_model<double>(small(ModelKind::ccrn), 1);
  auto b = net::build_model<double>(small(ModelKind::ccrn_state), 1);
  const auto x = random_input(a.config, 40, 5);
  const auto ya = net::forward(a, x).output, yb = net::forward(b, x).output;
  EXPECT_EQ(ya.channels(), yb.channels());
  EXPECT_EQ(ya.frames(), yb.frames());
}

TEST(Forward, InputWidthChecked) {
  auto m = net::build_model<double>(small(ModelKind::ccrn), 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(net::forward(m, Var<double>::constant(oracle::random_matrix<double>(10, 12, rng))), ValidationError);
}

TEST(Truncate, PrefixProperty) {
  std::mt19937_64 seeds(42);
  for (int trial = 0; trial < 6; ++trial) {
    const auto kind = trial % 2 ? ModelKind::ccrn_state : ModelKind::ccrn;
    auto m = net::build_model<double>(small(kind, 4), seeds());
    const auto x = random_input(m.config, 15 + trial, seeds());
    const auto full = net::forward(m, x);
    for (int l = 1; l <= 4; ++l) {
      auto t = net::truncate(m, l);
      EXPECT_EQ(t.config.blocks, l);
      EXPECT_EQ(net::forward(t, x).output.value(), full.probes[l - 1].value());
    }
  }
}

TEST(Truncate, OutOfRangeRejected) {
  const auto m = net::build_model<double>(small(ModelKind::ccrn), 1);
  EXPECT_THROW(net::truncate(m, 0), ValidationError);
  EXPECT_THROW(net::truncate(m, 4), ValidationError);
}

TEST(SelectDepth, SmallestDepthBelowThreshold) {
  EXPECT_EQ(net::select_depth({10.0, 5.0, 4.99, 4.0}), 2);
  EXPECT_EQ(net::select_depth({10.0, 5.0, 2.0, 1.0}), 4);
  EXPECT_EQ(net::select_depth({1.0, 1.0}), 1);
  EXPECT_EQ(net::select_depth({3.0}), 1);
  EXPECT_EQ(net::select_depth({10.0, 9.95, 5.0}), 1);
  EXPECT_THROW(net::select_depth({}), ValidationError);
}

TEST(Checkpoint, RoundTripIsExact) {
  for (auto kind : {ModelKind::ccrn, ModelKind::ccrn_state}) {
    auto m = net::build_model<float>(small(kind), 11);
    m.blocks[0].stage1.bn.running_mean.setConstant(0.25f);
    const auto path = scratch("model.ckpt");
    net::save_model(path, m);
    auto back = net::load_model(path);
    EXPECT_EQ(back.config, m.config);
    const auto pa = net::named_parameters(m), pb = net::named_parameters(back);
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].first, pb[i].first);
      EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
    }
    EXPECT_EQ(back.blocks[0].stage1.bn.running_mean, m.blocks[0].stage1.bn.running_mean);
  }
}

TEST(Checkpoint, WeightLayoutIsOutTapIn) {
  auto m = net::build_model<float>(small(ModelKind::ccrn), 2);
  const auto f = net::to_checkpoint(m);
  const auto* w = f.find("block1.stage1.conv.weight");
  ASSERT_NE(w, nullptr);
  EXPECT_EQ(w->dims, (std::vector<std::uint32_t>{16, 3, 16}));
  const auto& mat = m.blocks[0].stage1.conv.weight.value();
  // element (o=2, tap=1, in=5)
  EXPECT_EQ(w->values[2 * 48 + 1 * 16 + 5], mat(2, 1 * 16 + 5));
}

TEST(Checkpoint, CorruptFilesRejected) {
  auto m = net::build_model<float>(small(ModelKind::ccrn), 2);
  const auto bytes = checkpoint::serialize(net::to_checkpoint(m));
  const auto path = scratch("bad.ckpt");
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary) << b; };

  write("NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(net::load_model(path), ValidationError);
  write(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(net::load_model(path), ValidationError);
  write(bytes + "x");
  EXPECT_THROW(net::load_model(path), ValidationError);

  auto f = net::to_checkpoint(m);
  f.arrays.pop_back();
  write(checkpoint::serialize(f));
  EXPECT_THROW(net::load_model(path), ValidationError);

  f = net::to_checkpoint(m);
  f.header["model.blocks"] = "two";
  write(checkpoint::serialize(f));
  EXPECT_THROW(net::load_model(path), ValidationError);
}

TEST(Enhance, InferenceUsesRunningStatistics) {
  auto m = net::build_model<float>(small(ModelKind::ccrn), 3);
  std::mt19937_64 rng(3);
  FeatureSequence feats{oracle::random_matrix<double>(40, 24, rng), {}, {}};
  const auto a = net::enhance(m, feats, true);
  EXPECT_EQ(a.output.num_frames(), 40);
  EXPECT_EQ(a.output.bands(), 16);
  EXPECT_EQ(a.probes.size(), 3u);
  FeatureSequence first{feats.frames.topRows(20), {}, {}};
  const auto b = net::enhance(m, first, false);
  // Inference mode is frame-local up to the receptive field.
  EXPECT_LT((a.output.frames.row(5) - b.output.frames.row(5)).cwiseAbs().maxCoeff(), 1e-6);
}
