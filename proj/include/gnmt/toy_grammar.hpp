#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gnmt/rng.hpp"

#include "json.hpp"

namespace gnmt {

// Word classes of the synthetic template grammar.
enum ToyClass : int {
  kPron = 0,
  kDet,
  kNoun,
  kAdj,
  kVerb,
  kAdv,
  kPrep,
  kConj,
  kNumToyClasses,
};

// A probabilistic template grammar over an abstract interlingua. Each
// language renders abstract sentences through a bijective lexicon plus a
// deterministic local reordering rule, so reference translations are exactly
// recoverable from the source.
class ToyGrammar {
 public:
  struct Slot {
    int cls;
    int lit = -1;  // >= 0 pins the exact word index within the class
  };
  struct Template {
    double prob;
    std::vector<Slot> slots;
  };
  // Reorder rules: 0 = identity, 1 = swap each adjacent (Adj, Noun) pair,
  // 2 = swap each adjacent (Adv, Verb) pair.
  struct Language {
    std::string name;
    int reorder_rule = 0;
    std::vector<std::vector<std::string>> words;  // [class][index]
  };

  using AbstractToken = std::pair<int, int>;  // (class, word index)
  using Abstract = std::vector<AbstractToken>;

  static ToyGrammar make(uint64_t seed, int n_languages);

  Abstract sample(Rng& rng) const;
  std::vector<std::string> render(const Abstract& a, int lang) const;

  // Maps a rendered sentence back to the interlingua (bijective lexicon +
  // inverse reordering). Throws on unknown words.
  Abstract parse(const std::vector<std::string>& words, int lang) const;
  std::vector<std::string> translate_words(const std::vector<std::string>& words, int from,
                                           int to) const;

  // Expected relative unigram frequency per surface word, by template
  // enumeration (identical for every language modulo lexicon names).
  std::map<std::string, double> expected_word_freq(int lang) const;

  int language_count() const { return static_cast<int>(languages_.size()); }
  const Language& language(int i) const { return languages_[static_cast<size_t>(i)]; }
  const std::vector<Template>& templates() const { return templates_; }
  uint64_t seed() const { return seed_; }

  nlohmann::json to_json() const;

 private:
  uint64_t seed_ = 0;
  std::vector<Template> templates_;
  std::vector<Language> languages_;
  std::vector<std::map<std::string, AbstractToken>> reverse_lexicon_;
};

}  // namespace gnmt
