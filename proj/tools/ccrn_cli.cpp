// ccrn: corpus synthesis, training, enhancement, evaluation, gradient checks.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ccrn/cli.hpp"

namespace {

using namespace ccrn;

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : config::load(path);
  for (const auto& kv : overrides) config::apply(cfg, kv);
  cfg.validate();
  return cfg;
}

void add_config_options(CLI::App* cmd, std::string& path, std::vector<std::string>& overrides) {
  cmd->add_option("-c,--config", path, "key=value configuration file");
  cmd->add_option("-s,--set", overrides, "override one key (key=value), repeatable");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constant-channel residual networks for single-channel dereverberation"};
  app.require_subcommand(1);

  std::string cfg_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "synthesize clean and corrupted utterances plus a manifest");
  add_config_options(synth, cfg_path, overrides);
  synth->add_option("-o,--out-dir", out_dir, "output directory (default: paths.out_dir)");

  std::string resume;
  bool print_config = false;
  auto* train = app.add_subcommand("train", "train a model; writes paths.checkpoint and paths.log");
  add_config_options(train, cfg_path, overrides);
  train->add_option("--resume", resume, "continue from a training checkpoint");
  train->add_flag("--print-config", print_config, "print the effective configuration and exit");

  cli::EnhanceOptions eo;
  std::string e_ckpt, e_in, e_out, e_manifest, e_outdir, e_log, e_probes, e_spec;
  auto* enhance = app.add_subcommand("enhance", "enhance one WAV file or every file of a manifest");
  enhance->add_option("--checkpoint", e_ckpt, "model checkpoint")->required();
  enhance->add_option("-i,--in", e_in, "input WAV (16 kHz mono PCM16)");
  enhance->add_option("-o,--out", e_out, "output WAV");
  enhance->add_option("--manifest", e_manifest, "batch mode: manifest of inputs");
  enhance->add_option("--out-dir", e_outdir, "batch mode: output directory (<id>.wav)");
  enhance->add_option("--blocks", eo.blocks, "use the first l blocks, or 'auto' to select from --log");
  enhance->add_option("--log", e_log, "training log used by --blocks auto");
  enhance->add_option("--probes", e_probes, "write probe_NN.csv and probe_NN.wav for every block");
  enhance->add_option("--spectrum", e_spec, "write the output log spectrum as CSV");

  cli::EvaluateOptions vo;
  std::string v_manifest, v_enh, v_report, v_summary;
  auto* evaluate = app.add_subcommand("evaluate", "score enhanced files against the clean references");
  evaluate->add_option("--manifest", v_manifest, "manifest written by synth")->required();
  evaluate->add_option("--enhanced", v_enh, "directory holding <id>.wav for every manifest row")->required();
  evaluate->add_option("--report", v_report, "per-utterance CSV (id,condition,llr,srmr,n_active_frames)");
  evaluate->add_option("--summary", v_summary, "per-condition CSV");
  evaluate->add_flag("--check-direction", vo.check_direction,
                     "exit 2 unless enhanced mean SRMR exceeds unprocessed in every condition");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and a 2-block model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      const auto cfg = load_config(cfg_path, overrides);
      cli::cmd_synth(cfg, out_dir.empty() ? cfg.paths.out_dir : out_dir);
    } else if (train->parsed()) {
      const auto cfg = load_config(cfg_path, overrides);
      if (print_config) {
        std::cout << config::dump(cfg);
        return 0;
      }
      cli::cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
    } else if (enhance->parsed()) {
      eo.checkpoint = e_ckpt;
      eo.input = e_in;
      eo.output = e_out;
      eo.manifest = e_manifest;
      eo.out_dir = e_outdir;
      eo.log = e_log;
      eo.probes = e_probes;
      eo.spectrum = e_spec;
      cli::cmd_enhance(eo, std::cerr);
    } else if (evaluate->parsed()) {
      vo.manifest = v_manifest;
      vo.enhanced_dir = v_enh;
      vo.report = v_report;
      vo.summary = v_summary;
      cli::cmd_evaluate(vo);
    } else if (gradcheck->parsed()) {
      return cli::cmd_gradcheck() ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
