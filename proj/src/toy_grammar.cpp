#include "gnmt/toy_grammar.hpp"

#include <algorithm>
#include <set>

#include "gnmt/errors.hpp"

namespace gnmt {

namespace {

constexpr int kClassSizes[kNumToyClasses] = {5, 4, 18, 10, 12, 5, 4, 2};  // 60 words total

const char* class_name(int cls) {
  static const char* names[kNumToyClasses] = {"pron", "det",  "noun", "adj",
                                              "verb", "adv",  "prep", "conj"};
  return names[cls];
}

// Per-language syllable inventories; disjoint so surfaces never collide
// across languages.
const std::vector<std::vector<std::string>> kSyllables = {
    {"ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko", "ku"},
    {"ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu"},
    {"sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu"},
    {"fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi", "go", "gu", "la", "le", "li", "lo", "lu"},
    {"ra", "re", "ri", "ro", "ru", "za", "ze", "zi", "zo", "zu", "ja", "je", "ji", "jo", "ju"},
    {"ha", "he", "hi", "ho", "hu", "wa", "we", "wi", "wo", "wu", "ya", "ye", "yi", "yo", "yu"},
};

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string make_word(const std::vector<std::string>& syl, uint64_t seed, int lang, int cls,
                      int idx, int attempt) {
  uint64_t h = mix(seed ^ mix(static_cast<uint64_t>(lang) * 131 + static_cast<uint64_t>(cls)) ^
                   mix(static_cast<uint64_t>(idx) * 977 + static_cast<uint64_t>(attempt)));
  const int n_syl = 2 + static_cast<int>(h % 2);
  std::string w;
  for (int i = 0; i < n_syl; ++i) {
    h = mix(h);
    w += syl[h % syl.size()];
  }
  return w;
}

std::vector<ToyGrammar::Template> build_templates() {
  using S = ToyGrammar::Slot;
  std::vector<ToyGrammar::Template> t;
  t.push_back({0.08, {S{kDet}, S{kNoun}, S{kVerb}}});
  t.push_back({0.09, {S{kPron}, S{kVerb}, S{kDet}, S{kNoun}}});
  t.push_back({0.09, {S{kDet}, S{kAdj}, S{kNoun}, S{kVerb}}});
  t.push_back({0.09, {S{kDet}, S{kNoun}, S{kVerb}, S{kDet}, S{kNoun}}});
  t.push_back({0.08, {S{kPron}, S{kAdv}, S{kVerb}, S{kDet}, S{kNoun}}});
  t.push_back({0.09, {S{kDet}, S{kAdj}, S{kNoun}, S{kVerb}, S{kDet}, S{kNoun}}});
  // Pinned preposition: the pattern "pron verb _ det noun" occurs only here,
  // so the masked middle word is grammar-forced.
  t.push_back({0.08, {S{kPron}, S{kVerb}, S{kPrep, 0}, S{kDet}, S{kNoun}}});
  t.push_back({0.08, {S{kDet}, S{kNoun}, S{kVerb}, S{kPrep}, S{kDet}, S{kNoun}}});
  t.push_back({0.07, {S{kDet}, S{kAdj}, S{kNoun}, S{kVerb}, S{kPrep}, S{kDet}, S{kAdj}, S{kNoun}}});
  t.push_back({0.07, {S{kPron}, S{kVerb}, S{kDet}, S{kNoun}, S{kConj}, S{kPron}, S{kVerb}, S{kDet}, S{kNoun}}});
  t.push_back({0.06, {S{kDet}, S{kNoun}, S{kVerb}, S{kDet}, S{kNoun}, S{kConj}, S{kDet}, S{kAdj}, S{kNoun}, S{kVerb}}});
  t.push_back({0.06, {S{kPron}, S{kAdv}, S{kVerb}, S{kDet}, S{kAdj}, S{kNoun}, S{kConj}, S{kDet}, S{kNoun}, S{kVerb}, S{kPrep}, S{kDet}, S{kNoun}}});
  t.push_back({0.06, {S{kDet}, S{kAdj}, S{kNoun}, S{kVerb}, S{kDet}, S{kAdj}, S{kNoun}, S{kConj}, S{kPron}, S{kAdv}, S{kVerb}, S{kPrep}, S{kDet}, S{kAdj}, S{kNoun}}});
  return t;
}

using Abstract = ToyGrammar::Abstract;

Abstract apply_rule(const Abstract& a, int rule) {
  Abstract out = a;
  if (rule == 0) return out;
  const int first = rule == 1 ? kAdj : kAdv;
  const int second = rule == 1 ? kNoun : kVerb;
  for (size_t i = 0; i + 1 < out.size(); ++i)
    if (out[i].first == first && out[i + 1].first == second) std::swap(out[i], out[i + 1]);
  return out;
}

Abstract invert_rule(const Abstract& a, int rule) {
  Abstract out = a;
  if (rule == 0) return out;
  const int first = rule == 1 ? kAdj : kAdv;
  const int second = rule == 1 ? kNoun : kVerb;
  // forward pass swapped (first, second) -> (second, first); undo it
  for (size_t i = 0; i + 1 < out.size(); ++i)
    if (out[i].first == second && out[i + 1].first == first) std::swap(out[i], out[i + 1]);
  return out;
}

}  // namespace

ToyGrammar ToyGrammar::make(uint64_t seed, int n_languages) {
  if (n_languages < 2) throw ConfigError("toy grammar needs at least 2 languages");
  if (n_languages > static_cast<int>(kSyllables.size()))
    throw ConfigError("toy grammar supports at most " + std::to_string(kSyllables.size()) +
                      " languages");
  ToyGrammar g;
  g.seed_ = seed;
  g.templates_ = build_templates();
  for (int l = 0; l < n_languages; ++l) {
    Language lang;
    lang.name = "lang" + std::to_string(l);
    lang.reorder_rule = l % 3;
    lang.words.resize(kNumToyClasses);
    std::set<std::string> used;
    for (int cls = 0; cls < kNumToyClasses; ++cls) {
      for (int idx = 0; idx < kClassSizes[cls]; ++idx) {
        int attempt = 0;
        std::string w;
        do {
          w = make_word(kSyllables[static_cast<size_t>(l)], seed, l, cls, idx, attempt++);
        } while (used.count(w));
        used.insert(w);
        lang.words[static_cast<size_t>(cls)].push_back(w);
      }
    }
    g.languages_.push_back(std::move(lang));
  }
  g.reverse_lexicon_.resize(g.languages_.size());
  for (size_t l = 0; l < g.languages_.size(); ++l)
    for (int cls = 0; cls < kNumToyClasses; ++cls)
      for (size_t idx = 0; idx < g.languages_[l].words[static_cast<size_t>(cls)].size(); ++idx)
        g.reverse_lexicon_[l].emplace(g.languages_[l].words[static_cast<size_t>(cls)][idx],
                                      AbstractToken{cls, static_cast<int>(idx)});
  return g;
}

ToyGrammar::Abstract ToyGrammar::sample(Rng& rng) const {
  double u = rng.uniform();
  size_t pick = templates_.size() - 1;
  for (size_t i = 0; i < templates_.size(); ++i) {
    u -= templates_[i].prob;
    if (u < 0) {
      pick = i;
      break;
    }
  }
  Abstract a;
  for (const Slot& s : templates_[pick].slots) {
    const int idx = s.lit >= 0 ? s.lit
                               : static_cast<int>(rng.uniform_int(
                                     static_cast<uint64_t>(kClassSizes[s.cls])));
    a.emplace_back(s.cls, idx);
  }
  return a;
}

std::vector<std::string> ToyGrammar::render(const Abstract& a, int lang) const {
  const Language& L = languages_[static_cast<size_t>(lang)];
  const Abstract ordered = apply_rule(a, L.reorder_rule);
  std::vector<std::string> out;
  out.reserve(ordered.size());
  for (const auto& [cls, idx] : ordered)
    out.push_back(L.words[static_cast<size_t>(cls)][static_cast<size_t>(idx)]);
  return out;
}

ToyGrammar::Abstract ToyGrammar::parse(const std::vector<std::string>& words, int lang) const {
  const auto& rev = reverse_lexicon_[static_cast<size_t>(lang)];
  Abstract surface;
  for (const auto& w : words) {
    auto it = rev.find(w);
    if (it == rev.end()) throw DataError("toy grammar: unknown word '" + w + "'");
    surface.push_back(it->second);
  }
  return invert_rule(surface, languages_[static_cast<size_t>(lang)].reorder_rule);
}

std::vector<std::string> ToyGrammar::translate_words(const std::vector<std::string>& words,
                                                     int from, int to) const {
  return render(parse(words, from), to);
}

std::map<std::string, double> ToyGrammar::expected_word_freq(int lang) const {
  // Expected token count per word and sentence, over the template mixture.
  std::map<std::string, double> counts;
  double expected_len = 0.0;
  const Language& L = languages_[static_cast<size_t>(lang)];
  for (const Template& t : templates_) {
    expected_len += t.prob * static_cast<double>(t.slots.size());
    for (const Slot& s : t.slots) {
      if (s.lit >= 0) {
        counts[L.words[static_cast<size_t>(s.cls)][static_cast<size_t>(s.lit)]] += t.prob;
      } else {
        const double per = t.prob / static_cast<double>(kClassSizes[s.cls]);
        for (const auto& w : L.words[static_cast<size_t>(s.cls)]) counts[w] += per;
      }
    }
  }
  for (auto& [w, c] : counts) c /= expected_len;
  return counts;
}

nlohmann::json ToyGrammar::to_json() const {
  nlohmann::json j;
  j["seed"] = seed_;
  j["templates"] = nlohmann::json::array();
  for (const Template& t : templates_) {
    nlohmann::json slots = nlohmann::json::array();
    for (const Slot& s : t.slots) {
      nlohmann::json js;
      js["class"] = class_name(s.cls);
      if (s.lit >= 0) js["pinned"] = s.lit;
      slots.push_back(js);
    }
    j["templates"].push_back({{"prob", t.prob}, {"slots", slots}});
  }
  j["languages"] = nlohmann::json::array();
  for (const Language& l : languages_) {
    nlohmann::json jl;
    jl["name"] = l.name;
    jl["reorder_rule"] = l.reorder_rule;
    for (int cls = 0; cls < kNumToyClasses; ++cls)
      jl["words"][class_name(cls)] = l.words[static_cast<size_t>(cls)];
    j["languages"].push_back(jl);
  }
  return j;
}

}  // namespace gnmt
