#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gnmt/corpus.hpp"
#include "gnmt/evaluation.hpp"
#include "gnmt/model.hpp"
#include "gnmt/training.hpp"

#include "json.hpp"

namespace gnmt {

struct DecodeConfig {
  int samples = 10;
  int beam_width = 8;
  int max_rounds = 8;
  int nbest = 1;
  int workers = 0;  // 0 = hardware concurrency

  nlohmann::json to_json() const;
  static DecodeConfig from_json(const nlohmann::json& j);
};

struct PairFiles {
  std::string src_lang, tgt_lang;
  std::vector<std::string> train;  // [src_file, tgt_file] or empty
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

struct MonoFiles {
  std::string lang;
  std::string file;
};

struct ToyConfig {
  int languages = 2;
  int64_t train = 2000;
  int64_t valid = 200;
  int64_t test = 200;
  int64_t mono_per_language = 0;
  double mask_rate = 0.0;  // > 0 also emits masked test sources
  std::optional<std::pair<std::string, std::string>> excluded_pair;
};

// One JSON file drives every command; all paths are relative to the workdir.
// Unknown keys are rejected.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::vector<std::string> languages;
  ModelConfig model;         // vocab_sizes filled from vocab files at load time
  TrainConfig train;
  DecodeConfig decode;
  int64_t vocab_cap = 20000;
  PreprocessLimits limits;
  std::vector<PairFiles> pairs;
  std::vector<MonoFiles> mono;
  ToyConfig toy;
  std::string out_dir = "out";
  std::string workdir = ".";

  int lang_index(const std::string& name) const;
  std::string path(const std::string& rel) const;  // workdir-relative

  static ExperimentConfig from_json_file(const std::string& path, const std::string& workdir,
                                         const std::vector<std::string>& overrides);
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Canonical toy-artifact names: train.<src>-<tgt>.<lang>, mono.<lang>, etc.
  // Fills `pairs` and `mono` to match what gen-toy emits (the excluded pair
  // keeps only its test files).
  void populate_toy_data();
};

// Applies "--set dotted.key=value" overrides onto a JSON document.
void apply_override(nlohmann::json& j, const std::string& spec);

// ----- binarized corpus artifacts -----

void save_pair_corpus(const std::string& path, const std::vector<ParallelExample>& examples);
std::vector<ParallelExample> load_pair_corpus(const std::string& path);
void save_mono_corpus(const std::string& path, const std::vector<MonolingualExample>& examples);
std::vector<MonolingualExample> load_mono_corpus(const std::string& path);

// Mask sidecar: positions and hidden tokens per line of a masked source file.
struct MaskRecord {
  std::vector<int64_t> positions;
  std::vector<std::string> hidden;
};
void save_mask_sidecar(const std::string& path, const std::vector<MaskRecord>& records);
std::vector<MaskRecord> load_mask_sidecar(const std::string& path);

// ----- pipeline steps (shared by the CLI and the acceptance suite) -----

struct GenToyResult {
  std::vector<std::string> files;
};
GenToyResult run_gen_toy(const ExperimentConfig& cfg);

struct PreprocessStats {
  int64_t input = 0, kept = 0, rejected_too_long = 0, rejected_too_unknown = 0;
};
struct PreprocessResult {
  std::map<std::string, PreprocessStats> per_artifact;
};
PreprocessResult run_preprocess(const ExperimentConfig& cfg);

struct TrainRunResult {
  TrainResult train;
  std::string model_dir;
};
TrainRunResult run_train(const ExperimentConfig& cfg);

enum class TranslateMode { Em, Conditional, Missing, Pivot };
TranslateMode translate_mode_from_name(const std::string& name);

struct TranslateSpec {
  std::string checkpoint;           // model-dir-relative or workdir-relative path
  std::string via_checkpoint;       // pivot with two bilingual models (optional)
  TranslateMode mode = TranslateMode::Em;
  std::string input_file;           // raw text source
  std::string src_lang, tgt_lang, via_lang;
  std::string output_file;
  bool write_traces = false;
};
struct TranslateRunResult {
  int64_t sentences = 0;
  bool any_beam_warning = false;
};
TranslateRunResult run_translate(const ExperimentConfig& cfg, const TranslateSpec& spec);

struct EvaluateSpec {
  std::string hypothesis_file;
  std::string reference_file;
  std::string source_file;    // for length binning; optional
  std::string checkpoint;     // for KL reliance; optional
  std::string pair_bin;       // binarized test pairs for KL; optional
  std::string system_name = "system";
  std::string report_dir;     // defaults to out_dir
};
struct EvaluateRunResult {
  BleuReport bleu;
  std::optional<KlReport> kl;
};
EvaluateRunResult run_evaluate(const ExperimentConfig& cfg, const EvaluateSpec& spec);

// Merges several evaluation report directories into combined CSVs
// (one row per system in bleu.csv, one row per system per bin in plot data).
void run_report(const ExperimentConfig& cfg, const std::vector<std::string>& named_dirs,
                const std::string& out_dir);

}  // namespace gnmt
