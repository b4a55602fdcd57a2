#include "gnmt/cli.hpp"

#include <iostream>

#include "CLI11.hpp"
#include "gnmt/errors.hpp"
#include "gnmt/evaluation.hpp"
#include "gnmt/experiment.hpp"
#include "gnmt/format.hpp"

namespace gnmt {

namespace {

struct GlobalArgs {
  std::string workdir = ".";
  std::string config = "experiment.json";
  std::vector<std::string> overrides;
};

ExperimentConfig load_config(const GlobalArgs& g) {
  std::string cfg_path = g.config;
  if (!cfg_path.empty() && cfg_path.front() != '/') cfg_path = g.workdir + "/" + cfg_path;
  return ExperimentConfig::from_json_file(cfg_path, g.workdir, g.overrides);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"generative machine translation laboratory"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--workdir", g.workdir, "base directory for all relative paths");
  app.add_option("--config", g.config, "experiment config JSON (workdir-relative)");
  app.add_option("--set", g.overrides, "override a config key, e.g. --set train.seed=7");

  auto* cmd_gen_toy = app.add_subcommand("gen-toy", "generate a synthetic toy corpus");
  auto* cmd_preprocess =
      app.add_subcommand("preprocess", "build vocabularies and binarized corpora");
  auto* cmd_train = app.add_subcommand("train", "train the configured model variant");

  auto* cmd_translate = app.add_subcommand("translate", "decode a source file");
  std::string mode = "em", checkpoint, via_checkpoint, input, output, src, tgt, via;
  bool traces = false;
  cmd_translate->add_option("--mode", mode, "em | conditional | missing | pivot");
  cmd_translate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  cmd_translate->add_option("--via-checkpoint", via_checkpoint,
                            "second checkpoint for two-model pivots");
  cmd_translate->add_option("--input", input, "source text file")->required();
  cmd_translate->add_option("--output", output, "output translation file")->required();
  cmd_translate->add_option("--src", src, "source language name")->required();
  cmd_translate->add_option("--tgt", tgt, "target language name")->required();
  cmd_translate->add_option("--via", via, "pivot language name");
  cmd_translate->add_flag("--traces", traces, "write a refinement trace JSONL next to the output");

  auto* cmd_evaluate = app.add_subcommand("evaluate", "score hypotheses against references");
  EvaluateSpec espec;
  cmd_evaluate->add_option("--hyp", espec.hypothesis_file)->required();
  cmd_evaluate->add_option("--ref", espec.reference_file)->required();
  cmd_evaluate->add_option("--src", espec.source_file, "source file for length binning");
  cmd_evaluate->add_option("--checkpoint", espec.checkpoint, "checkpoint for KL reliance");
  cmd_evaluate->add_option("--pair-bin", espec.pair_bin, "binarized test pairs for KL reliance");
  cmd_evaluate->add_option("--system", espec.system_name, "system label in reports");
  cmd_evaluate->add_option("--report-dir", espec.report_dir, "where to write the CSVs");

  auto* cmd_report = app.add_subcommand("report", "merge evaluation directories");
  std::vector<std::string> named_dirs;
  std::string report_out = "report";
  cmd_report->add_option("--in", named_dirs, "name=dir entries to merge")->required();
  cmd_report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = load_config(g);
    if (cmd_gen_toy->parsed()) {
      auto r = run_gen_toy(cfg);
      std::cout << "gen-toy: wrote " << r.files.size() << " files\n";
      return kExitOk;
    }
    if (cmd_preprocess->parsed()) {
      auto r = run_preprocess(cfg);
      for (const auto& [artifact, s] : r.per_artifact)
        std::cout << artifact << ": kept " << s.kept << "/" << s.input << " (too-long "
                  << s.rejected_too_long << ", too-unknown " << s.rejected_too_unknown << ")\n";
      return kExitOk;
    }
    if (cmd_train->parsed()) {
      auto r = run_train(cfg);
      std::cout << "trained " << r.train.iterations << " iterations; best validation ELBO "
                << format_double(r.train.best_validation, 4) << " at iteration "
                << r.train.best_iteration << (r.train.early_stopped ? " (early stop)" : "")
                << "\nbest checkpoint: " << r.train.best_checkpoint << '\n';
      return kExitOk;
    }
    if (cmd_translate->parsed()) {
      TranslateSpec spec;
      spec.mode = translate_mode_from_name(mode);
      spec.checkpoint = checkpoint;
      spec.via_checkpoint = via_checkpoint;
      spec.input_file = input;
      spec.output_file = output;
      spec.src_lang = src;
      spec.tgt_lang = tgt;
      spec.via_lang = via;
      spec.write_traces = traces;
      auto r = run_translate(cfg, spec);
      std::cout << "translated " << r.sentences << " sentences -> " << output << '\n';
      if (r.any_beam_warning) {
        std::cerr << "warning: some sentences did not finish within the length budget\n";
        return kExitDecodeWarnings;
      }
      return kExitOk;
    }
    if (cmd_evaluate->parsed()) {
      auto r = run_evaluate(cfg, espec);
      std::cout << render_bleu_table({{espec.system_name, r.bleu}});
      if (r.kl) std::cout << render_kl_table({{espec.system_name, *r.kl}});
      return kExitOk;
    }
    if (cmd_report->parsed()) {
      run_report(cfg, named_dirs, report_out);
      std::cout << "report written to " << report_out << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}

}  // namespace gnmt
