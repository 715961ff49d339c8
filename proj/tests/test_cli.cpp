#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "ccrn/corpus.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ccrn_test_cli";

const std::string kSmallModel =
    " -s model.blocks=2 -s model.channels=16 -s train.seq_len=20 -s train.batch_size=2"
    " -s corpus.utterances=2 -s corpus.duration_s=1 -s train.log_every=1";

struct Run {
  int code;
  std::string output;
};

Run run_cli(const std::string& args) {
  fs::create_directories(kRoot);
  const auto out = kRoot / "last_output.txt";
  const std::string cmd = "cd '" + kRoot.string() + "' && '" CCRN_CLI_PATH "' " + args + " > '" + out.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(out);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  EXPECT_TRUE(is) << p;
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) n += !line.empty();
  return n;
}

void fresh(const std::string& dir) { fs::remove_all(kRoot / dir); }

}  // namespace

TEST(Cli, NoSubcommandIsValidationError) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  auto r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("enhance"), std::string::npos);
}

TEST(Cli, SynthIsDeterministicAndCountsRows) {
  fresh("s1");
  fresh("s2");
  const std::string opts = " -s corpus.utterances=3 -s corpus.duration_s=0.5 -s corpus.rt60=0.5 -s corpus.seed=4";
  ASSERT_EQ(run_cli("synth -o s1" + opts).code, 0);
  ASSERT_EQ(run_cli("synth -o s2" + opts).code, 0);
  EXPECT_EQ(count_lines(kRoot / "s1/manifest.csv"), 1u + 3u);
  for (const auto& rel : {"manifest.csv", "clean/u000.wav", "clean/u002.wav", "noisy/rt60_0.5/u001.wav"})
    EXPECT_EQ(slurp(kRoot / "s1" / rel), slurp(kRoot / "s2" / rel)) << rel;
}

TEST(Cli, SynthIdentityConditionCopiesClean) {
  fresh("s0");
  ASSERT_EQ(run_cli("synth -o s0 -s corpus.utterances=2 -s corpus.duration_s=0.5 -s corpus.rt60=0 -s corpus.snr_db=inf").code, 0);
  EXPECT_EQ(slurp(kRoot / "s0/noisy/rt60_0/u001.wav"), slurp(kRoot / "s0/clean/u001.wav"));
}

TEST(Cli, SynthKeepsHeadroomInsteadOfClipping) {
  fresh("hr");
  const auto r = run_cli("synth -o hr -s corpus.utterances=20 -s corpus.seed=777 -s corpus.rt60=0.25,0.5");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("clipped"), std::string::npos) << r.output;
}

TEST(Cli, InvalidConfigHasNoSideEffects) {
  fresh("bad");
  const auto r = run_cli("synth -o bad -s corpus.utterances=0");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(kRoot / "bad"));
  EXPECT_EQ(run_cli("synth -o bad -s corpus.weather=rain").code, 1);
  EXPECT_FALSE(fs::exists(kRoot / "bad"));
  std::ofstream(kRoot / "bad.cfg") << "model.blocks = 3\nno_such.key = 1\n";
  const auto t = run_cli("train -c bad.cfg -s paths.log=bad/log.csv");
  EXPECT_EQ(t.code, 1);
  EXPECT_NE(t.output.find("bad.cfg:2"), std::string::npos) << t.output;
  EXPECT_FALSE(fs::exists(kRoot / "bad"));
}

TEST(Cli, PrintConfigListsEveryKey) {
  const auto r = run_cli("train --print-config -s model.blocks=4");
  ASSERT_EQ(r.code, 0);
  for (const auto* key : {"model.kind", "model.blocks = 4", "model.channels", "model.state_step", "train.alpha",
                          "train.seq_len", "train.lr", "train.steps", "train.seed", "corpus.rt60", "corpus.snr_db",
                          "corpus.drr_db", "paths.checkpoint", "paths.log"})
    EXPECT_NE(r.output.find(key), std::string::npos) << key;
}

TEST(Cli, TrainLogAndResume) {
  fresh("t");
  ASSERT_EQ(run_cli("train" + kSmallModel + " -s train.steps=4 -s paths.checkpoint=t/full.ckpt -s paths.log=t/full.csv").code, 0);
  std::ifstream log(kRoot / "t/full.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,total,per_block_1,per_block_2");
  while (std::getline(log, line)) EXPECT_EQ(ccrn::corpus::split_csv(line).size(), 2u + 2u);

  ASSERT_EQ(run_cli("train" + kSmallModel + " -s train.steps=2 -s paths.checkpoint=t/part.ckpt -s paths.log=t/part.csv").code, 0);
  const auto r = run_cli("train --resume t/part.ckpt" + kSmallModel +
                      " -s train.steps=4 -s paths.checkpoint=t/part.ckpt -s paths.log=t/part.csv");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(kRoot / "t/part.ckpt"), slurp(kRoot / "t/full.ckpt"));
  EXPECT_EQ(slurp(kRoot / "t/part.csv"), slurp(kRoot / "t/full.csv"));

  const auto mismatch = run_cli("train --resume t/part.ckpt" + kSmallModel + " -s model.blocks=3 -s train.steps=6");
  EXPECT_EQ(mismatch.code, 1);
}

TEST(Cli, EnhanceOutputsAndProbes) {
  fresh("e");
  ASSERT_EQ(run_cli("synth -o e/c -s corpus.utterances=2 -s corpus.duration_s=1 -s corpus.rt60=0.5").code, 0);
  ASSERT_EQ(run_cli("train" + kSmallModel + " -s train.steps=3 -s paths.checkpoint=e/m.ckpt -s paths.log=e/log.csv").code, 0);
  const std::string in = " --checkpoint e/m.ckpt -i e/c/noisy/rt60_0.5/u000.wav";
  ASSERT_EQ(run_cli("enhance" + in + " -o e/default.wav --spectrum e/default.csv --probes e/p").code, 0);
  ASSERT_EQ(run_cli("enhance" + in + " -o e/full.wav --blocks 2").code, 0);
  EXPECT_EQ(slurp(kRoot / "e/default.wav"), slurp(kRoot / "e/full.wav"));

  std::size_t csv = 0, wav = 0;
  for (const auto& f : fs::directory_iterator(kRoot / "e/p")) {
    csv += f.path().extension() == ".csv";
    wav += f.path().extension() == ".wav";
  }
  EXPECT_EQ(csv, 2u);
  EXPECT_EQ(wav, 2u);
  EXPECT_EQ(slurp(kRoot / "e/p/probe_02.csv"), slurp(kRoot / "e/default.csv"));
  EXPECT_EQ(slurp(kRoot / "e/p/probe_02.wav"), slurp(kRoot / "e/default.wav"));
  std::ifstream spec(kRoot / "e/default.csv");
  std::string row;
  std::getline(spec, row);
  EXPECT_EQ(ccrn::corpus::split_csv(row).size(), 512u);

  ASSERT_EQ(run_cli("enhance" + in + " -o e/one.wav --blocks 1").code, 0);
  EXPECT_EQ(slurp(kRoot / "e/one.wav"), slurp(kRoot / "e/p/probe_01.wav"));
  const auto aut = run_cli("enhance" + in + " -o e/auto.wav --blocks auto --log e/log.csv");
  EXPECT_EQ(aut.code, 0);
  EXPECT_NE(aut.output.find("selected"), std::string::npos);

  EXPECT_EQ(run_cli("enhance" + in + " -o e/x.wav --blocks 3").code, 1);
  EXPECT_EQ(run_cli("enhance" + in + " -o e/x.wav --blocks auto").code, 1);
  EXPECT_FALSE(fs::exists(kRoot / "e/x.wav"));

  ccrn::Waveform w8 = ccrn::corpus::synth_speech(1, 0.5);
  w8.sample_rate = 8000;
  ccrn::corpus::write_wav(kRoot / "e/8k.wav", w8);
  const auto rate = run_cli("enhance --checkpoint e/m.ckpt -i e/8k.wav -o e/y.wav");
  EXPECT_EQ(rate.code, 1);
  EXPECT_NE(rate.output.find("8000"), std::string::npos);

  std::ofstream(kRoot / "e/junk.ckpt") << "CCRN01 but not really";
  EXPECT_EQ(run_cli("enhance --checkpoint e/junk.ckpt -i e/c/clean/u000.wav -o e/y.wav").code, 1);
}

TEST(Cli, EvaluateCleanAgainstCleanAndDirectionalCheck) {
  fresh("v");
  ASSERT_EQ(run_cli("synth -o v/c -s corpus.utterances=2 -s corpus.duration_s=1 -s corpus.rt60=0.25,0.7").code, 0);
  // enhanced := clean reference
  fs::create_directories(kRoot / "v/ref");
  fs::create_directories(kRoot / "v/same");
  for (const auto& r : ccrn::corpus::read_manifest(kRoot / "v/c/manifest.csv")) {
    fs::copy_file(kRoot / "v/c" / r.clean_path, kRoot / "v/ref" / (r.id + ".wav"));
    fs::copy_file(kRoot / "v/c" / r.path, kRoot / "v/same" / (r.id + ".wav"));
  }
  const auto r = run_cli("evaluate --manifest v/c/manifest.csv --enhanced v/ref --report v/report.csv --summary v/summary.csv");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines(kRoot / "v/report.csv"), 1u + 4u);
  EXPECT_EQ(count_lines(kRoot / "v/summary.csv"), 1u + 2u);
  std::ifstream rep(kRoot / "v/report.csv");
  std::string line;
  std::getline(rep, line);
  EXPECT_EQ(line, "id,condition,llr,srmr,n_active_frames");
  while (std::getline(rep, line)) EXPECT_EQ(ccrn::corpus::split_csv(line)[2], "0");

  EXPECT_EQ(run_cli("evaluate --manifest v/c/manifest.csv --enhanced v/ref --check-direction").code, 0);
  EXPECT_NE(run_cli("evaluate --manifest v/c/manifest.csv --enhanced v/same --check-direction").code, 0);

  fs::remove(kRoot / "v/ref/rt60_0.7_u001.wav");
  fs::remove(kRoot / "v/ref/rt60_0.25_u000.wav");
  const auto miss = run_cli("evaluate --manifest v/c/manifest.csv --enhanced v/ref");
  EXPECT_EQ(miss.code, 1);
  EXPECT_NE(miss.output.find("rt60_0.7_u001.wav"), std::string::npos) << miss.output;
  EXPECT_NE(miss.output.find("rt60_0.25_u000.wav"), std::string::npos) << miss.output;
}

TEST(Cli, GradcheckPasses) {
  const auto r = run_cli("gradcheck");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("ccrn-state"), std::string::npos);
}
