#include "gnmt/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "gnmt/decoding.hpp"
#include "gnmt/errors.hpp"
#include "gnmt/evaluation.hpp"
#include "gnmt/format.hpp"
#include "gnmt/toy_grammar.hpp"

namespace gnmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("corpus artifact: truncated stream");
  return v;
}

void write_ids(std::ostream& os, const std::vector<int>& ids) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(ids.size()));
  for (int id : ids) write_pod<int32_t>(os, id);
}
std::vector<int> read_ids(std::istream& is) {
  const auto n = read_pod<uint32_t>(is);
  std::vector<int> ids(n);
  for (auto& id : ids) id = read_pod<int32_t>(is);
  return ids;
}

constexpr char kPairMagic[8] = {'G', 'N', 'M', 'T', 'D', 'A', 'T', '1'};
constexpr char kMonoMagic[8] = {'G', 'N', 'M', 'T', 'D', 'A', 'T', '2'};

}  // namespace

json DecodeConfig::to_json() const {
  return {{"samples", samples},
          {"beam_width", beam_width},
          {"max_rounds", max_rounds},
          {"nbest", nbest},
          {"workers", workers}};
}

DecodeConfig DecodeConfig::from_json(const json& j) {
  require_keys(j, {"samples", "beam_width", "max_rounds", "nbest", "workers"}, "decode");
  DecodeConfig c;
  c.samples = j.value("samples", c.samples);
  c.beam_width = j.value("beam_width", c.beam_width);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  c.nbest = j.value("nbest", c.nbest);
  c.workers = j.value("workers", c.workers);
  if (c.samples < 1 || c.beam_width < 1 || c.max_rounds < 1 || c.nbest < 1)
    throw ConfigError("decode settings must be >= 1");
  return c;
}

int ExperimentConfig::lang_index(const std::string& name) const {
  for (size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == name) return static_cast<int>(i);
  throw ConfigError("unknown language: " + name);
}

std::string ExperimentConfig::path(const std::string& rel) const {
  if (rel.empty()) return rel;
  if (rel.front() == '/') return rel;
  return workdir + "/" + rel;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_keys(j,
               {"seed", "languages", "model", "train", "decode", "vocab_cap", "limits", "data",
                "toy", "out_dir"},
               "config");
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  if (!j.contains("languages")) throw ConfigError("config: languages required");
  c.languages = j.at("languages").get<std::vector<std::string>>();
  if (c.languages.size() < 2) throw ConfigError("config: need at least 2 languages");

  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, {"variant", "z_dim", "hidden_dim", "embed_dim"}, "model");
    c.model.variant = variant_from_name(m.value("variant", "gnmt"));
    c.model.z_dim = m.value("z_dim", int64_t{100});
    c.model.hidden_dim = m.value("hidden_dim", int64_t{1000});
    c.model.embed_dim = m.value("embed_dim", int64_t{300});
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  c.train.seed = c.seed;
  if (j.contains("decode")) c.decode = DecodeConfig::from_json(j.at("decode"));
  c.vocab_cap = j.value("vocab_cap", c.vocab_cap);
  if (j.contains("limits")) {
    const json& l = j.at("limits");
    require_keys(l, {"max_len", "max_unk_fraction"}, "limits");
    c.limits.max_len = l.value("max_len", c.limits.max_len);
    c.limits.max_unk_fraction = l.value("max_unk_fraction", c.limits.max_unk_fraction);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    require_keys(d, {"pairs", "mono"}, "data");
    for (const json& p : d.value("pairs", json::array())) {
      require_keys(p, {"src", "tgt", "train", "valid", "test"}, "data.pairs[]");
      PairFiles pf;
      pf.src_lang = p.at("src").get<std::string>();
      pf.tgt_lang = p.at("tgt").get<std::string>();
      pf.train = p.value("train", std::vector<std::string>{});
      pf.valid = p.value("valid", std::vector<std::string>{});
      pf.test = p.value("test", std::vector<std::string>{});
      for (const auto* v : {&pf.train, &pf.valid, &pf.test})
        if (!v->empty() && v->size() != 2)
          throw ConfigError("data.pairs[] file lists must hold [src_file, tgt_file]");
      c.pairs.push_back(std::move(pf));
    }
    for (const json& m : d.value("mono", json::array())) {
      require_keys(m, {"lang", "file"}, "data.mono[]");
      c.mono.push_back(MonoFiles{m.at("lang").get<std::string>(), m.at("file").get<std::string>()});
    }
  }
  if (j.contains("toy")) {
    const json& t = j.at("toy");
    require_keys(t,
                 {"languages", "train", "valid", "test", "mono_per_language", "mask_rate",
                  "excluded_pair"},
                 "toy");
    c.toy.languages = t.value("languages", c.toy.languages);
    c.toy.train = t.value("train", c.toy.train);
    c.toy.valid = t.value("valid", c.toy.valid);
    c.toy.test = t.value("test", c.toy.test);
    c.toy.mono_per_language = t.value("mono_per_language", c.toy.mono_per_language);
    c.toy.mask_rate = t.value("mask_rate", c.toy.mask_rate);
    if (t.contains("excluded_pair") && !t.at("excluded_pair").is_null()) {
      const auto v = t.at("excluded_pair").get<std::vector<std::string>>();
      if (v.size() != 2) throw ConfigError("toy.excluded_pair must name two languages");
      c.toy.excluded_pair = std::make_pair(v[0], v[1]);
    }
  }
  c.out_dir = j.value("out_dir", c.out_dir);

  // cross-checks
  for (const PairFiles& p : c.pairs) {
    c.lang_index(p.src_lang);
    c.lang_index(p.tgt_lang);
    if (p.src_lang == p.tgt_lang) throw ConfigError("pair with equal source and target language");
  }
  for (const MonoFiles& m : c.mono) c.lang_index(m.lang);
  return c;
}

json ExperimentConfig::to_json() const {
  json pairs_json = json::array();
  for (const PairFiles& p : pairs)
    pairs_json.push_back({{"src", p.src_lang},
                          {"tgt", p.tgt_lang},
                          {"train", p.train},
                          {"valid", p.valid},
                          {"test", p.test}});
  json mono_json = json::array();
  for (const MonoFiles& m : mono) mono_json.push_back({{"lang", m.lang}, {"file", m.file}});
  json toy_json = {{"languages", toy.languages},
                   {"train", toy.train},
                   {"valid", toy.valid},
                   {"test", toy.test},
                   {"mono_per_language", toy.mono_per_language},
                   {"mask_rate", toy.mask_rate},
                   {"excluded_pair", nullptr}};
  if (toy.excluded_pair)
    toy_json["excluded_pair"] = std::vector<std::string>{toy.excluded_pair->first,
                                                         toy.excluded_pair->second};
  return {{"seed", seed},
          {"languages", languages},
          {"model",
           {{"variant", variant_name(model.variant)},
            {"z_dim", model.z_dim},
            {"hidden_dim", model.hidden_dim},
            {"embed_dim", model.embed_dim}}},
          {"train", train.to_json()},
          {"decode", decode.to_json()},
          {"vocab_cap", vocab_cap},
          {"limits", {{"max_len", limits.max_len}, {"max_unk_fraction", limits.max_unk_fraction}}},
          {"data", {{"pairs", pairs_json}, {"mono", mono_json}}},
          {"toy", toy_json},
          {"out_dir", out_dir}};
}

void apply_override(json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + spec);
  const std::string key = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json* node = &j;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  json parsed = json::parse(value, nullptr, false);
  (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path,
                                                  const std::string& workdir,
                                                  const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  for (const std::string& o : overrides) apply_override(j, o);
  ExperimentConfig c = from_json(j);
  c.workdir = workdir;
  return c;
}

namespace {
std::string pair_file(const std::string& split, const std::string& s, const std::string& t,
                      const std::string& side) {
  return split + "." + s + "-" + t + "." + side;
}
}  // namespace

void ExperimentConfig::populate_toy_data() {
  if (toy.languages < 2) throw ConfigError("toy.languages must be >= 2");
  languages.clear();
  for (int l = 0; l < toy.languages; ++l) languages.push_back("lang" + std::to_string(l));
  pairs.clear();
  mono.clear();
  for (int i = 0; i < toy.languages; ++i)
    for (int j = 0; j < toy.languages; ++j) {
      if (i == j) continue;
      PairFiles p;
      p.src_lang = languages[static_cast<size_t>(i)];
      p.tgt_lang = languages[static_cast<size_t>(j)];
      const bool excluded =
          toy.excluded_pair && ((toy.excluded_pair->first == p.src_lang &&
                                 toy.excluded_pair->second == p.tgt_lang) ||
                                (toy.excluded_pair->first == p.tgt_lang &&
                                 toy.excluded_pair->second == p.src_lang));
      // bilingual variants train a single direction; every pair keeps test data
      const bool trains = !excluded && (model.variant == Variant::GnmtMulti || (i == 0 && j == 1));
      if (trains) {
        p.train = {pair_file("train", p.src_lang, p.tgt_lang, p.src_lang),
                   pair_file("train", p.src_lang, p.tgt_lang, p.tgt_lang)};
        p.valid = {pair_file("valid", p.src_lang, p.tgt_lang, p.src_lang),
                   pair_file("valid", p.src_lang, p.tgt_lang, p.tgt_lang)};
      }
      p.test = {pair_file("test", p.src_lang, p.tgt_lang, p.src_lang),
                pair_file("test", p.src_lang, p.tgt_lang, p.tgt_lang)};
      pairs.push_back(std::move(p));
    }
  if (toy.mono_per_language > 0)
    for (const std::string& l : languages) mono.push_back(MonoFiles{l, "mono." + l});
}

void save_pair_corpus(const std::string& path, const std::vector<ParallelExample>& examples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write corpus artifact: " + path);
  os.write(kPairMagic, sizeof(kPairMagic));
  write_pod<uint64_t>(os, examples.size());
  for (const ParallelExample& ex : examples) {
    write_pod<int32_t>(os, ex.source.language);
    write_pod<int32_t>(os, ex.target.language);
    write_ids(os, ex.source.tokens);
    write_ids(os, ex.target.tokens);
  }
}

std::vector<ParallelExample> load_pair_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read corpus artifact: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kPairMagic, 8) != 0)
    throw DataError("not a pair corpus artifact: " + path);
  const auto n = read_pod<uint64_t>(is);
  std::vector<ParallelExample> out;
  out.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    ParallelExample ex;
    ex.source.language = read_pod<int32_t>(is);
    ex.target.language = read_pod<int32_t>(is);
    ex.source.tokens = read_ids(is);
    ex.target.tokens = read_ids(is);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_mono_corpus(const std::string& path, const std::vector<MonolingualExample>& examples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write corpus artifact: " + path);
  os.write(kMonoMagic, sizeof(kMonoMagic));
  write_pod<uint64_t>(os, examples.size());
  for (const MonolingualExample& ex : examples) {
    write_pod<int32_t>(os, ex.sentence.language);
    write_ids(os, ex.sentence.tokens);
  }
}

std::vector<MonolingualExample> load_mono_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read corpus artifact: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMonoMagic, 8) != 0)
    throw DataError("not a mono corpus artifact: " + path);
  const auto n = read_pod<uint64_t>(is);
  std::vector<MonolingualExample> out;
  out.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    MonolingualExample ex;
    ex.sentence.language = read_pod<int32_t>(is);
    ex.sentence.tokens = read_ids(is);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_mask_sidecar(const std::string& path, const std::vector<MaskRecord>& records) {
  json arr = json::array();
  for (const MaskRecord& r : records)
    arr.push_back({{"positions", r.positions}, {"hidden", r.hidden}});
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write mask sidecar: " + path);
  os << arr.dump(2) << '\n';
}

std::vector<MaskRecord> load_mask_sidecar(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("mask sidecar missing: " + path);
  json arr = json::parse(is);
  std::vector<MaskRecord> out;
  for (const json& r : arr) {
    MaskRecord rec;
    rec.positions = r.at("positions").get<std::vector<int64_t>>();
    rec.hidden = r.at("hidden").get<std::vector<std::string>>();
    out.push_back(std::move(rec));
  }
  return out;
}

GenToyResult run_gen_toy(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.populate_toy_data();
  const ToyGrammar grammar = ToyGrammar::make(cfg.seed, cfg.toy.languages);
  Rng master(cfg.seed);
  GenToyResult result;

  auto join = [](const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) out += ' ';
      out += words[i];
    }
    return out;
  };

  // Parallel splits for every direction pair (each pair gets its own stream;
  // the excluded pair still receives test data).
  for (const PairFiles& p : cfg.pairs) {
    const int si = cfg.lang_index(p.src_lang);
    const int ti = cfg.lang_index(p.tgt_lang);
    struct Split {
      const char* name;
      int64_t count;
      bool enabled;
    };
    const Split splits[] = {{"train", cfg.toy.train, !p.train.empty()},
                            {"valid", cfg.toy.valid, !p.valid.empty()},
                            {"test", cfg.toy.test, true}};
    for (const Split& sp : splits) {
      if (!sp.enabled) continue;
      const std::string src_file = pair_file(sp.name, p.src_lang, p.tgt_lang, p.src_lang);
      const std::string tgt_file = pair_file(sp.name, p.src_lang, p.tgt_lang, p.tgt_lang);
      Rng rng = master.split("toy:" + src_file);
      std::vector<std::string> src_lines, tgt_lines;
      for (int64_t i = 0; i < sp.count; ++i) {
        const auto abstract = grammar.sample(rng);
        src_lines.push_back(join(grammar.render(abstract, si)));
        tgt_lines.push_back(join(grammar.render(abstract, ti)));
      }
      write_lines(cfg.path(src_file), src_lines);
      write_lines(cfg.path(tgt_file), tgt_lines);
      result.files.push_back(src_file);
      result.files.push_back(tgt_file);

      // masked variant of test sources
      if (std::string(sp.name) == "test" && cfg.toy.mask_rate > 0) {
        Rng mask_rng = master.split("mask:" + src_file);
        std::vector<std::string> masked_lines;
        std::vector<MaskRecord> records;
        for (const std::string& line : src_lines) {
          std::vector<std::string> words = tokenize(line);
          const size_t n = words.size();
          const size_t k = static_cast<size_t>(
              std::floor(cfg.toy.mask_rate * static_cast<double>(n) + 0.5));
          std::vector<size_t> idx(n);
          for (size_t w = 0; w < n; ++w) idx[w] = w;
          for (size_t w = 0; w < k; ++w) {
            const size_t j = w + static_cast<size_t>(mask_rng.uniform_int(n - w));
            std::swap(idx[w], idx[j]);
          }
          std::vector<int64_t> positions(idx.begin(), idx.begin() + static_cast<long>(k));
          std::sort(positions.begin(), positions.end());
          MaskRecord rec;
          for (int64_t pos : positions) {
            rec.positions.push_back(pos);
            rec.hidden.push_back(words[static_cast<size_t>(pos)]);
            words[static_cast<size_t>(pos)] = kMaskText;
          }
          records.push_back(std::move(rec));
          masked_lines.push_back(join(words));
        }
        const std::string masked_file = src_file + ".masked";
        write_lines(cfg.path(masked_file), masked_lines);
        save_mask_sidecar(cfg.path(src_file + ".mask.json"), records);
        result.files.push_back(masked_file);
        result.files.push_back(src_file + ".mask.json");
      }
    }
  }

  // Monolingual files
  for (const MonoFiles& m : cfg.mono) {
    const int li = cfg.lang_index(m.lang);
    Rng rng = master.split("toy:" + m.file);
    std::vector<std::string> lines;
    for (int64_t i = 0; i < cfg.toy.mono_per_language; ++i)
      lines.push_back(join(grammar.render(grammar.sample(rng), li)));
    write_lines(cfg.path(m.file), lines);
    result.files.push_back(m.file);
  }

  // Grammar sidecar
  {
    std::ofstream os(cfg.path("grammar.json"), std::ios::binary);
    if (!os) throw DataError("cannot write grammar sidecar");
    os << grammar.to_json().dump(2) << '\n';
    result.files.push_back("grammar.json");
  }
  return result;
}

namespace {
// Commands run against the canonical toy layout when no data section is
// configured explicitly.
ExperimentConfig resolved(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  if (cfg.pairs.empty() && cfg.toy.languages >= 2) cfg.populate_toy_data();
  return cfg;
}
}  // namespace

PreprocessResult run_preprocess(const ExperimentConfig& cfg_in) {
  const ExperimentConfig cfg = resolved(cfg_in);
  if (cfg.pairs.empty()) throw ConfigError("preprocess: no data pairs configured");
  fs::create_directories(cfg.path(cfg.out_dir));

  // vocabularies from the paired training data only
  std::vector<Vocabulary> vocabs;
  for (const std::string& lang : cfg.languages) {
    std::vector<std::vector<std::string>> corpus;
    for (const PairFiles& p : cfg.pairs) {
      if (p.train.empty()) continue;
      if (p.src_lang == lang)
        for (const std::string& line : read_lines(cfg.path(p.train[0])))
          corpus.push_back(tokenize(line));
      if (p.tgt_lang == lang)
        for (const std::string& line : read_lines(cfg.path(p.train[1])))
          corpus.push_back(tokenize(line));
    }
    if (corpus.empty())
      throw DataError("preprocess: no training text for language " + lang);
    Vocabulary v = Vocabulary::build(corpus, static_cast<size_t>(cfg.vocab_cap));
    v.save_file(cfg.path(cfg.out_dir + "/vocab." + lang + ".txt"));
    vocabs.push_back(std::move(v));
  }

  PreprocessResult result;
  for (const PairFiles& p : cfg.pairs) {
    const int si = cfg.lang_index(p.src_lang);
    const int ti = cfg.lang_index(p.tgt_lang);
    struct Split {
      const char* name;
      const std::vector<std::string>* files;
    };
    const Split splits[] = {{"train", &p.train}, {"valid", &p.valid}, {"test", &p.test}};
    for (const Split& sp : splits) {
      if (sp.files->empty()) continue;
      const auto src_lines = read_lines(cfg.path((*sp.files)[0]));
      const auto tgt_lines = read_lines(cfg.path((*sp.files)[1]));
      if (src_lines.size() != tgt_lines.size())
        throw DataError("preprocess: misaligned pair files for " + p.src_lang + "-" + p.tgt_lang);
      PreprocessStats stats;
      std::vector<ParallelExample> kept;
      for (size_t i = 0; i < src_lines.size(); ++i) {
        ++stats.input;
        auto outcome =
            preprocess_pair(src_lines[i], tgt_lines[i], vocabs[static_cast<size_t>(si)],
                            vocabs[static_cast<size_t>(ti)], si, ti, cfg.limits);
        if (std::holds_alternative<ParallelExample>(outcome)) {
          ++stats.kept;
          kept.push_back(std::get<ParallelExample>(std::move(outcome)));
        } else if (std::get<RejectReason>(outcome) == RejectReason::TooLong) {
          ++stats.rejected_too_long;
        } else {
          ++stats.rejected_too_unknown;
        }
      }
      if (kept.empty())
        throw DataError(std::string("preprocess: every sentence of ") + sp.name + "." +
                        p.src_lang + "-" + p.tgt_lang + " was rejected");
      const std::string artifact =
          cfg.out_dir + "/" + pair_file(sp.name, p.src_lang, p.tgt_lang, "bin");
      save_pair_corpus(cfg.path(artifact), kept);
      result.per_artifact.emplace(artifact, stats);
    }
  }

  for (const MonoFiles& m : cfg.mono) {
    const int li = cfg.lang_index(m.lang);
    PreprocessStats stats;
    std::vector<MonolingualExample> kept;
    for (const std::string& line : read_lines(cfg.path(m.file))) {
      ++stats.input;
      auto outcome = preprocess_mono(line, vocabs[static_cast<size_t>(li)], li, cfg.limits);
      if (std::holds_alternative<Sentence>(outcome)) {
        ++stats.kept;
        kept.push_back(MonolingualExample{std::get<Sentence>(std::move(outcome))});
      } else if (std::get<RejectReason>(outcome) == RejectReason::TooLong) {
        ++stats.rejected_too_long;
      } else {
        ++stats.rejected_too_unknown;
      }
    }
    if (kept.empty()) throw DataError("preprocess: every sentence of " + m.file + " was rejected");
    const std::string artifact = cfg.out_dir + "/mono." + m.lang + ".bin";
    save_mono_corpus(cfg.path(artifact), kept);
    result.per_artifact.emplace(artifact, stats);
  }

  // stats file
  json stats_json;
  for (const auto& [artifact, s] : result.per_artifact)
    stats_json[artifact] = {{"input", s.input},
                            {"kept", s.kept},
                            {"rejected_too_long", s.rejected_too_long},
                            {"rejected_too_unknown", s.rejected_too_unknown}};
  std::ofstream os(cfg.path(cfg.out_dir + "/preprocess_stats.json"), std::ios::binary);
  os << stats_json.dump(2) << '\n';
  return result;
}

namespace {

std::vector<Vocabulary> load_vocabs(const ExperimentConfig& cfg) {
  std::vector<Vocabulary> vocabs;
  for (const std::string& lang : cfg.languages)
    vocabs.push_back(Vocabulary::load_file(cfg.path(cfg.out_dir + "/vocab." + lang + ".txt")));
  return vocabs;
}

}  // namespace

TrainRunResult run_train(const ExperimentConfig& cfg_in) {
  const ExperimentConfig cfg = resolved(cfg_in);
  auto vocabs = load_vocabs(cfg);
  ModelConfig mc = cfg.model;
  mc.vocab_sizes.clear();
  for (const Vocabulary& v : vocabs) mc.vocab_sizes.push_back(v.size());
  mc.validate();

  std::vector<ParallelExample> train, valid;
  int trained_pairs = 0;
  for (const PairFiles& p : cfg.pairs) {
    if (p.train.empty()) continue;
    ++trained_pairs;
    auto t = load_pair_corpus(
        cfg.path(cfg.out_dir + "/" + pair_file("train", p.src_lang, p.tgt_lang, "bin")));
    train.insert(train.end(), t.begin(), t.end());
    if (!p.valid.empty()) {
      auto v = load_pair_corpus(
          cfg.path(cfg.out_dir + "/" + pair_file("valid", p.src_lang, p.tgt_lang, "bin")));
      valid.insert(valid.end(), v.begin(), v.end());
    }
  }
  if (train.empty()) throw DataError("train: no training examples");
  if (valid.empty()) throw DataError("train: no validation examples");
  if (cfg.model.variant != Variant::GnmtMulti && trained_pairs != 1)
    throw ConfigError("bilingual variants train on exactly one direction pair");

  std::vector<MonolingualExample> mono;
  if (!cfg.mono.empty()) {
    if (cfg.model.variant != Variant::GnmtMulti)
      throw ConfigError("semi-supervised (monolingual) training requires the multilingual variant");
    for (const MonoFiles& m : cfg.mono) {
      auto mm = load_mono_corpus(cfg.path(cfg.out_dir + "/mono." + m.lang + ".bin"));
      mono.insert(mono.end(), mm.begin(), mm.end());
    }
  }

  GnmtModel model(mc);
  Rng init_rng = Rng(cfg.seed).split("init");
  model.init_params(init_rng);

  const std::string model_dir = cfg.path(cfg.out_dir);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  Trainer trainer(model, tc, std::move(train), std::move(mono), std::move(valid), model_dir);
  TrainRunResult out;
  out.train = trainer.run();
  out.model_dir = model_dir;
  {
    std::ofstream os(model_dir + "/experiment.json", std::ios::binary);
    os << cfg.to_json().dump(2) << '\n';
  }
  return out;
}

namespace {

GnmtModel load_model(const std::string& checkpoint_path) {
  ParameterStore store;
  std::optional<TrainStateBlob> state;
  const std::string config_json = store.load_file(checkpoint_path, &state);
  ModelConfig mc = ModelConfig::from_json(json::parse(config_json));
  GnmtModel model(mc);
  for (const std::string& name : model.params().names()) {
    if (!store.has(name))
      throw DataError("checkpoint missing tensor '" + name + "': " + checkpoint_path);
    const Tensor& loaded = store.value(name);
    Tensor& dst = model.params().value(name);
    if (!loaded.same_shape(dst))
      throw DataError("checkpoint tensor shape mismatch for '" + name + "'");
    dst = loaded;
  }
  return model;
}

uint64_t line_seed(uint64_t base, size_t index) {
  return Rng(base).split(index + 1).state()[0];
}

}  // namespace

TranslateMode translate_mode_from_name(const std::string& name) {
  if (name == "em") return TranslateMode::Em;
  if (name == "conditional") return TranslateMode::Conditional;
  if (name == "missing") return TranslateMode::Missing;
  if (name == "pivot") return TranslateMode::Pivot;
  throw ConfigError("unknown translate mode: " + name);
}

TranslateRunResult run_translate(const ExperimentConfig& cfg_in, const TranslateSpec& spec) {
  const ExperimentConfig cfg = resolved(cfg_in);
  GnmtModel model = load_model(cfg.path(spec.checkpoint));
  std::optional<GnmtModel> via_model;
  if (!spec.via_checkpoint.empty()) via_model = load_model(cfg.path(spec.via_checkpoint));

  const Variant variant = model.config().variant;
  if (spec.mode == TranslateMode::Em && variant == Variant::Vnmt)
    throw ConfigError("mode em needs a gnmt-variant checkpoint, got vnmt");
  if (spec.mode == TranslateMode::Missing && variant == Variant::Vnmt)
    throw ConfigError("mode missing needs a gnmt-variant checkpoint, got vnmt");
  if (spec.mode == TranslateMode::Conditional && variant != Variant::Vnmt)
    throw ConfigError("mode conditional needs a vnmt checkpoint, got " +
                      std::string(variant_name(variant)));

  auto vocabs = load_vocabs(cfg);
  const int src_lang = cfg.lang_index(spec.src_lang);
  const int tgt_lang = cfg.lang_index(spec.tgt_lang);
  const Vocabulary& src_vocab = vocabs[static_cast<size_t>(src_lang)];
  const Vocabulary& tgt_vocab = vocabs[static_cast<size_t>(tgt_lang)];

  const auto lines = read_lines(cfg.path(spec.input_file));

  // masked-mode sidecar
  std::vector<MaskRecord> mask_records;
  if (spec.mode == TranslateMode::Missing) {
    std::string sidecar = spec.input_file;
    const std::string suffix = ".masked";
    if (sidecar.size() > suffix.size() &&
        sidecar.substr(sidecar.size() - suffix.size()) == suffix)
      sidecar = sidecar.substr(0, sidecar.size() - suffix.size());
    sidecar += ".mask.json";
    mask_records = load_mask_sidecar(cfg.path(sidecar));
    if (mask_records.size() != lines.size())
      throw DataError("mask sidecar row count does not match input lines");
  }

  const int via_lang = spec.via_lang.empty() ? tgt_lang : cfg.lang_index(spec.via_lang);
  if (spec.mode == TranslateMode::Pivot && variant != Variant::GnmtMulti &&
      !via_model.has_value())
    throw ConfigError("mode pivot needs a multilingual checkpoint or a --via-checkpoint");

  std::vector<TranslationResult> results(lines.size());
  auto decode_one = [&](size_t i) {
    DecodeOptions opts;
    opts.samples = cfg.decode.samples;
    opts.beam_width = cfg.decode.beam_width;
    opts.max_rounds = cfg.decode.max_rounds;
    opts.nbest = cfg.decode.nbest;
    opts.seed = line_seed(cfg.seed, i);
    std::vector<int> ids = src_vocab.encode(tokenize(lines[i]));
    switch (spec.mode) {
      case TranslateMode::Em:
        results[i] = translate_em(model, ids, src_lang, tgt_lang, opts);
        break;
      case TranslateMode::Conditional:
        results[i] = translate_conditional(model, ids, src_lang, tgt_lang, opts);
        break;
      case TranslateMode::Missing: {
        MaskedSentence ms;
        ms.visible = Sentence{ids, src_lang};
        for (int64_t p : mask_records[i].positions) {
          if (p < 0 || p >= static_cast<int64_t>(ms.visible.tokens.size()))
            throw DataError("mask position out of range at line " + std::to_string(i + 1));
          ms.positions.push_back(p);
          ms.visible.tokens[static_cast<size_t>(p)] = kMaskId;
        }
        results[i] = translate_missing(model, ms, tgt_lang, opts);
        break;
      }
      case TranslateMode::Pivot: {
        const GnmtModel& second = via_model ? *via_model : model;
        results[i] = pivot_translate(model, second, ids, src_lang, via_lang, tgt_lang, opts);
        break;
      }
    }
  };

  const int workers = cfg.decode.workers > 0
                          ? cfg.decode.workers
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  decode_parallel(lines.size(), workers, decode_one);

  TranslateRunResult out;
  out.sentences = static_cast<int64_t>(lines.size());
  std::vector<std::string> out_lines;
  out_lines.reserve(lines.size());
  for (const TranslationResult& r : results) {
    out.any_beam_warning = out.any_beam_warning || r.beam_warning;
    out_lines.push_back(render_tokens(r.tokens, tgt_vocab));
  }
  write_lines(cfg.path(spec.output_file), out_lines);

  if (spec.write_traces) {
    std::ofstream os(cfg.path(spec.output_file + ".trace.jsonl"), std::ios::binary);
    if (!os) throw DataError("cannot write trace file");
    for (const TranslationResult& r : results) os << r.trace.to_json().dump() << '\n';
  }
  if (cfg.decode.nbest > 1) {
    std::ofstream os(cfg.path(spec.output_file + ".nbest.tsv"), std::ios::binary);
    for (const TranslationResult& r : results) {
      int rank = 1;
      for (const Hypothesis& h : r.nbest)
        os << rank++ << '\t' << format_double(h.score) << '\t'
           << render_tokens(h.tokens, tgt_vocab) << '\n';
    }
  }
  if (spec.mode == TranslateMode::Pivot) {
    std::ofstream os(cfg.path(spec.output_file + ".pivot.txt"), std::ios::binary);
    const Vocabulary& via_vocab = vocabs[static_cast<size_t>(via_lang)];
    for (const TranslationResult& r : results)
      os << render_tokens(r.intermediate, via_vocab) << '\n';
  }
  if (spec.mode == TranslateMode::Missing) {
    std::ofstream os(cfg.path(spec.output_file + ".fill.txt"), std::ios::binary);
    for (const TranslationResult& r : results)
      os << render_tokens(r.fill, src_vocab) << '\n';
  }
  return out;
}

EvaluateRunResult run_evaluate(const ExperimentConfig& cfg, const EvaluateSpec& spec) {
  const auto hyp_lines = read_lines(cfg.path(spec.hypothesis_file));
  const auto ref_lines = read_lines(cfg.path(spec.reference_file));
  if (hyp_lines.size() != ref_lines.size())
    throw DataError("evaluate: hypothesis/reference line counts differ");

  std::vector<std::vector<std::string>> hyp, ref;
  for (const auto& l : hyp_lines) hyp.push_back(tokenize(l));
  for (const auto& l : ref_lines) ref.push_back(tokenize(l));

  EvaluateRunResult out;
  out.bleu = corpus_bleu(hyp, ref);

  const std::string dir = cfg.path(spec.report_dir.empty() ? cfg.out_dir : spec.report_dir);
  fs::create_directories(dir);
  emit_bleu_csv(dir + "/bleu.csv", {{spec.system_name, out.bleu}});

  std::vector<int64_t> lengths;
  if (!spec.source_file.empty()) {
    for (const auto& l : read_lines(cfg.path(spec.source_file)))
      lengths.push_back(static_cast<int64_t>(tokenize(l).size()));
  } else {
    for (const auto& r : ref) lengths.push_back(static_cast<int64_t>(r.size()));
  }
  if (lengths.size() != hyp.size()) throw DataError("evaluate: source line count differs");
  auto binned = bleu_by_length(hyp, ref, lengths);
  emit_length_csv(dir + "/bleu_by_length.csv", {{spec.system_name, binned}});

  if (!spec.checkpoint.empty() && !spec.pair_bin.empty()) {
    GnmtModel model = load_model(cfg.path(spec.checkpoint));
    auto test_pairs = load_pair_corpus(cfg.path(spec.pair_bin));
    out.kl = kl_reliance(model, test_pairs);
    emit_kl_csv(dir + "/kl.csv", {{spec.system_name, *out.kl}});
  }
  return out;
}

void run_report(const ExperimentConfig& cfg, const std::vector<std::string>& named_dirs,
                const std::string& out_dir) {
  if (named_dirs.empty()) throw ConfigError("report: nothing to merge");
  const std::string dir = cfg.path(out_dir);
  fs::create_directories(dir);

  std::vector<std::pair<std::string, BleuReport>> bleus;
  std::ofstream plot(dir + "/bleu_by_length.csv", std::ios::binary);
  plot << "bin_mid,bleu,count,system,bin_lo,bin_hi\n";
  std::ofstream kl(dir + "/kl.csv", std::ios::binary);
  kl << "system,mean_kl,mean_kl_vs_standard_normal,sentences\n";

  for (const std::string& spec : named_dirs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("report expects name=dir, got: " + spec);
    const std::string name = spec.substr(0, eq);
    const std::string src = cfg.path(spec.substr(eq + 1));
    for (auto& [old_name, rep] : parse_bleu_csv(src + "/bleu.csv")) bleus.emplace_back(name, rep);
    for (const std::string& line : read_lines(src + "/bleu_by_length.csv")) {
      if (line.rfind("bin_mid,", 0) == 0 || line.empty()) continue;
      // replace the system column (4th of 6)
      std::vector<std::string> cells;
      std::istringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 6) continue;
      cells[3] = name;
      plot << cells[0] << ',' << cells[1] << ',' << cells[2] << ',' << cells[3] << ','
           << cells[4] << ',' << cells[5] << '\n';
    }
    const std::string kl_path = src + "/kl.csv";
    if (fs::exists(kl_path)) {
      for (const std::string& line : read_lines(kl_path)) {
        if (line.rfind("system,", 0) == 0 || line.empty()) continue;
        const auto comma = line.find(',');
        kl << name << line.substr(comma) << '\n';
      }
    }
  }
  emit_bleu_csv(dir + "/bleu.csv", bleus);
}

}  // namespace gnmt
