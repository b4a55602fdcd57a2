#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gnmt/cli.hpp"
#include "gnmt/errors.hpp"
#include "gnmt/experiment.hpp"

using namespace gnmt;
namespace fs = std::filesystem;

namespace {

const std::string kWork = "/tmp/gnmt_cli_test";

void write_config(const std::string& dir, const nlohmann::json& extra = {}) {
  nlohmann::json j = {
      {"seed", 5},
      {"languages", {"lang0", "lang1"}},
      {"model", {{"variant", "gnmt"}, {"z_dim", 4}, {"hidden_dim", 12}, {"embed_dim", 8}}},
      {"train",
       {{"kl_anneal_iterations", 100},
        {"batch_size", 8},
        {"validation_interval", 25},
        {"patience", 4},
        {"max_iterations", 120},
        {"word_dropout_rate", 0.2},
        {"learning_rate", 0.003}}},
      {"decode",
       {{"samples", 3}, {"beam_width", 3}, {"max_rounds", 3}, {"workers", 1}, {"nbest", 1}}},
      {"vocab_cap", 100},
      {"toy", {{"languages", 2}, {"train", 120}, {"valid", 20}, {"test", 12}, {"mask_rate", 0.25}}},
      {"out_dir", "out"}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  fs::create_directories(dir);
  std::ofstream os(dir + "/experiment.json");
  os << j.dump(2);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

int cli(std::initializer_list<std::string> args) {
  std::vector<std::string> full{"gnmt", "--workdir", kWork};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// One shared end-to-end run: gen-toy -> preprocess -> train -> translate.
struct Pipeline {
  Pipeline() {
    fs::remove_all(kWork);
    write_config(kWork);
    REQUIRE(cli({"gen-toy"}) == kExitOk);
    REQUIRE(cli({"preprocess"}) == kExitOk);
    REQUIRE(cli({"train"}) == kExitOk);
  }
  static const Pipeline& get() {
    static Pipeline p;
    return p;
  }
};

}  // namespace

TEST_CASE("unknown config keys are rejected") {
  const std::string dir = "/tmp/gnmt_cli_badcfg";
  write_config(dir, {{"surprise", 1}});
  std::vector<const char*> argv{"gnmt", "--workdir", dir.c_str(), "gen-toy"};
  CHECK(run_cli(4, argv.data()) == kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("--set overrides reach the parsed config") {
  nlohmann::json j = {{"seed", 1}, {"languages", {"a", "b"}}};
  apply_override(j, "seed=42");
  apply_override(j, "train.batch_size=4");
  CHECK(j["seed"] == 42);
  CHECK(j["train"]["batch_size"] == 4);
  apply_override(j, "out_dir=elsewhere");
  CHECK(j["out_dir"] == "elsewhere");
}

TEST_CASE("gen-toy materializes all direction pairs and reruns byte-identically") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  for (const char* f :
       {"train.lang0-lang1.lang0", "train.lang0-lang1.lang1", "valid.lang0-lang1.lang0",
        "test.lang0-lang1.lang0", "test.lang1-lang0.lang1", "test.lang0-lang1.lang0.masked",
        "test.lang0-lang1.lang0.mask.json", "grammar.json"})
    CHECK(fs::exists(kWork + "/" + f));
  // bilingual toy layouts train a single direction
  CHECK_FALSE(fs::exists(kWork + "/train.lang1-lang0.lang0"));

  const std::string before = slurp(kWork + "/train.lang0-lang1.lang0");
  REQUIRE(cli({"gen-toy"}) == kExitOk);
  CHECK(slurp(kWork + "/train.lang0-lang1.lang0") == before);

  // L=3 materializes 6 direction pairs; an excluded pair keeps only test data
  const std::string dir3 = "/tmp/gnmt_cli_l3";
  write_config(dir3, {{"languages", {"lang0", "lang1", "lang2"}},
                      {"model",
                       {{"variant", "gnmt-multi"}, {"z_dim", 4}, {"hidden_dim", 12},
                        {"embed_dim", 8}}},
                      {"toy",
                       {{"languages", 3},
                        {"train", 10},
                        {"valid", 4},
                        {"test", 4},
                        {"mask_rate", 0.0},
                        {"excluded_pair", {"lang1", "lang2"}}}}});
  std::vector<const char*> argv{"gnmt", "--workdir", dir3.c_str(), "gen-toy"};
  REQUIRE(run_cli(4, argv.data()) == kExitOk);
  int pair_train_files = 0;
  for (const auto& e : fs::directory_iterator(dir3))
    if (e.path().filename().string().rfind("train.", 0) == 0) ++pair_train_files;
  CHECK(pair_train_files == 2 * 4);  // 4 trained direction pairs, 2 sides each
  CHECK(fs::exists(dir3 + "/test.lang1-lang2.lang1"));
  CHECK(fs::exists(dir3 + "/test.lang2-lang1.lang2"));
  CHECK_FALSE(fs::exists(dir3 + "/train.lang1-lang2.lang1"));
  fs::remove_all(dir3);
}

TEST_CASE("preprocess is idempotent and accounts for every sentence") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  const std::string stats_path = kWork + "/out/preprocess_stats.json";
  REQUIRE(fs::exists(stats_path));
  const std::string bin_before = slurp(kWork + "/out/train.lang0-lang1.bin");
  const std::string stats_before = slurp(stats_path);
  REQUIRE(cli({"preprocess"}) == kExitOk);
  CHECK(slurp(kWork + "/out/train.lang0-lang1.bin") == bin_before);
  CHECK(slurp(stats_path) == stats_before);

  auto stats = nlohmann::json::parse(stats_before);
  for (const auto& [artifact, s] : stats.items()) {
    CHECK(s.at("input").get<int64_t>() - s.at("kept").get<int64_t>() ==
          s.at("rejected_too_long").get<int64_t>() + s.at("rejected_too_unknown").get<int64_t>());
  }
}

TEST_CASE("preprocess fails loudly when everything is filtered out") {
  const std::string dir = "/tmp/gnmt_cli_allrejected";
  write_config(dir);
  fs::create_directories(dir);
  // a single 60-token pair: everything is rejected as too long
  std::string long_line;
  for (int i = 0; i < 60; ++i) long_line += "word ";
  for (const char* name :
       {"train.lang0-lang1.lang0", "train.lang0-lang1.lang1", "valid.lang0-lang1.lang0",
        "valid.lang0-lang1.lang1", "test.lang0-lang1.lang0", "test.lang0-lang1.lang1",
        "train.lang1-lang0.lang1", "train.lang1-lang0.lang0", "valid.lang1-lang0.lang1",
        "valid.lang1-lang0.lang0", "test.lang1-lang0.lang1", "test.lang1-lang0.lang0"}) {
    std::ofstream os(dir + "/" + name);
    os << long_line << "\n";
  }
  std::vector<const char*> argv{"gnmt", "--workdir", dir.c_str(), "preprocess"};
  CHECK(run_cli(4, argv.data()) == kExitData);
  fs::remove_all(dir);
}

TEST_CASE("train writes checkpoints, metrics, and a config echo") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  CHECK(fs::exists(kWork + "/out/checkpoint_best.bin"));
  CHECK(fs::exists(kWork + "/out/checkpoint_final.bin"));
  CHECK(fs::exists(kWork + "/out/metrics.csv"));
  CHECK(fs::exists(kWork + "/out/experiment.json"));
  const std::string header = slurp(kWork + "/out/metrics.csv").substr(0, 120);
  CHECK(header.rfind("iteration,objective,reconstruction_x,reconstruction_y,kl,anneal_weight,"
                     "wall_ms",
                     0) == 0);
}

TEST_CASE("translate em produces aligned output and traces") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  REQUIRE(cli({"translate", "--mode", "em", "--checkpoint", "out/checkpoint_best.bin", "--input",
               "test.lang0-lang1.lang0", "--output", "out/test.hyp", "--src", "lang0", "--tgt",
               "lang1", "--traces"}) == kExitOk);
  CHECK(read_lines(kWork + "/out/test.hyp").size() ==
        read_lines(kWork + "/test.lang0-lang1.lang0").size());
  CHECK(fs::exists(kWork + "/out/test.hyp.trace.jsonl"));
  // determinism across reruns
  const std::string before = slurp(kWork + "/out/test.hyp");
  REQUIRE(cli({"translate", "--mode", "em", "--checkpoint", "out/checkpoint_best.bin", "--input",
               "test.lang0-lang1.lang0", "--output", "out/test.hyp", "--src", "lang0", "--tgt",
               "lang1"}) == kExitOk);
  CHECK(slurp(kWork + "/out/test.hyp") == before);
}

TEST_CASE("translate missing requires the sidecar and fills masked slots") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  REQUIRE(cli({"translate", "--mode", "missing", "--checkpoint", "out/checkpoint_best.bin",
               "--input", "test.lang0-lang1.lang0.masked", "--output", "out/test_missing.hyp",
               "--src", "lang0", "--tgt", "lang1"}) == kExitOk);
  CHECK(fs::exists(kWork + "/out/test_missing.hyp.fill.txt"));

  // sidecar absent -> data error
  fs::copy_file(kWork + "/test.lang0-lang1.lang0.masked", kWork + "/nosidecar.masked",
                fs::copy_options::overwrite_existing);
  CHECK(cli({"translate", "--mode", "missing", "--checkpoint", "out/checkpoint_best.bin",
             "--input", "nosidecar.masked", "--output", "out/nope.hyp", "--src", "lang0", "--tgt",
             "lang1"}) == kExitData);
}

TEST_CASE("mode and variant mismatches exit with a config error") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  CHECK(cli({"translate", "--mode", "conditional", "--checkpoint", "out/checkpoint_best.bin",
             "--input", "test.lang0-lang1.lang0", "--output", "out/x.hyp", "--src", "lang0",
             "--tgt", "lang1"}) == kExitConfig);
  CHECK(cli({"translate", "--mode", "sideways", "--checkpoint", "out/checkpoint_best.bin",
             "--input", "test.lang0-lang1.lang0", "--output", "out/x.hyp", "--src", "lang0",
             "--tgt", "lang1"}) == kExitConfig);
}

TEST_CASE("evaluate scores perfect hypotheses at BLEU 100 and is idempotent") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  REQUIRE(cli({"evaluate", "--hyp", "test.lang0-lang1.lang1", "--ref", "test.lang0-lang1.lang1",
               "--src", "test.lang0-lang1.lang0", "--checkpoint", "out/checkpoint_best.bin",
               "--pair-bin", "out/test.lang0-lang1.bin", "--system", "self", "--report-dir",
               "out/eval_self"}) == kExitOk);
  for (const char* f : {"bleu.csv", "bleu_by_length.csv", "kl.csv"})
    CHECK(fs::exists(kWork + "/out/eval_self/" + std::string(f)));
  auto rows = parse_bleu_csv(kWork + "/out/eval_self/bleu.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].second.bleu == doctest::Approx(100.0));

  const std::string before = slurp(kWork + "/out/eval_self/bleu.csv");
  REQUIRE(cli({"evaluate", "--hyp", "test.lang0-lang1.lang1", "--ref", "test.lang0-lang1.lang1",
               "--src", "test.lang0-lang1.lang0", "--checkpoint", "out/checkpoint_best.bin",
               "--pair-bin", "out/test.lang0-lang1.bin", "--system", "self", "--report-dir",
               "out/eval_self"}) == kExitOk);
  CHECK(slurp(kWork + "/out/eval_self/bleu.csv") == before);

  // misaligned files are a data error
  CHECK(cli({"evaluate", "--hyp", "valid.lang0-lang1.lang1", "--ref", "test.lang0-lang1.lang1"}) ==
        kExitData);
}

TEST_CASE("report merges systems into shared CSVs") {
  const Pipeline& p = Pipeline::get();
  (void)p;
  REQUIRE(cli({"report", "--in", "sysA=out/eval_self", "--in", "sysB=out/eval_self", "--out",
               "out/report"}) == kExitOk);
  auto merged = parse_bleu_csv(kWork + "/out/report/bleu.csv");
  REQUIRE(merged.size() == 2);
  CHECK(merged[0].first == "sysA");
  CHECK(merged[1].first == "sysB");
  const auto plot = read_lines(kWork + "/out/report/bleu_by_length.csv");
  // header + one row per bin per system (two systems)
  CHECK((plot.size() - 1) % 2 == 0);
  CHECK(plot.size() > 1);
}

TEST_CASE("vnmt variant trains and rejects monolingual mixing") {
  const std::string dir = "/tmp/gnmt_cli_vnmt";
  write_config(dir, {{"model",
                      {{"variant", "vnmt"}, {"z_dim", 4}, {"hidden_dim", 10}, {"embed_dim", 6}}},
                     {"train",
                      {{"kl_anneal_iterations", 60},
                       {"batch_size", 8},
                       {"validation_interval", 20},
                       {"patience", 3},
                       {"max_iterations", 60}}},
                     {"toy",
                      {{"languages", 2},
                       {"train", 60},
                       {"valid", 12},
                       {"test", 8},
                       {"mask_rate", 0.0},
                       {"mono_per_language", 20}}}});
  std::vector<const char*> argv{"gnmt", "--workdir", dir.c_str(), "gen-toy"};
  REQUIRE(run_cli(4, argv.data()) == kExitOk);
  std::vector<const char*> argv2{"gnmt", "--workdir", dir.c_str(), "preprocess"};
  REQUIRE(run_cli(4, argv2.data()) == kExitOk);
  // vnmt + monolingual data: rejected
  std::vector<const char*> argv3{"gnmt", "--workdir", dir.c_str(), "train"};
  CHECK(run_cli(4, argv3.data()) == kExitConfig);
  // without the monolingual pool it trains and decodes conditionally
  std::vector<const char*> argv4{"gnmt", "--workdir", dir.c_str(), "--set",
                                 "toy.mono_per_language=0", "train"};
  REQUIRE(run_cli(6, argv4.data()) == kExitOk);
  std::vector<const char*> argv5{
      "gnmt", "--workdir", dir.c_str(), "--set", "toy.mono_per_language=0",
      "translate", "--mode", "conditional", "--checkpoint", "out/checkpoint_best.bin",
      "--input", "test.lang0-lang1.lang0", "--output", "out/cond.hyp",
      "--src", "lang0", "--tgt", "lang1"};
  REQUIRE(run_cli(static_cast<int>(argv5.size()), argv5.data()) == kExitOk);
  CHECK(read_lines(dir + "/out/cond.hyp").size() == 8);
  fs::remove_all(dir);
}
