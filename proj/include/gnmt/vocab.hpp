#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace gnmt {

// Reserved ids shared by every vocabulary.
constexpr int kUnkId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kPadId = 3;
constexpr int kNumReserved = 4;
// Sentinel for a masked position inside a Sentence; never embedded. Rendered
// as "<mask>" in text, and replaced by UNK before feeding conditional models.
constexpr int kMaskId = -1;

extern const char* const kUnkText;
extern const char* const kBosText;
extern const char* const kEosText;
extern const char* const kPadText;
extern const char* const kMaskText;

// Token-to-id bijection over the retained tokens plus the four reserved ids.
class Vocabulary {
 public:
  // Keeps the `cap` most frequent tokens; frequency ties go to the token seen
  // first in corpus order.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, size_t cap);

  int id_of(const std::string& token) const;         // kUnkId when absent
  const std::string& token_of(int id) const;
  bool contains(const std::string& token) const { return id_.count(token) > 0; }
  int size() const { return static_cast<int>(tokens_.size()); }  // includes reserved

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // One token per line, line number = id - 4.
  void save_file(const std::string& path) const;
  static Vocabulary load_file(const std::string& path);

  void add_token(const std::string& token);

  Vocabulary();

 private:
  std::vector<std::string> tokens_;             // index = id
  std::unordered_map<std::string, int> id_;     // non-reserved only
};

struct LanguageId {
  int index = 0;
  int count = 1;  // L
  std::vector<double> one_hot() const {
    std::vector<double> v(static_cast<size_t>(count), 0.0);
    v[static_cast<size_t>(index)] = 1.0;
    return v;
  }
};

// Token ids exclude BOS/EOS; those are added by the models where needed.
struct Sentence {
  std::vector<int> tokens;
  int language = 0;
};

struct ParallelExample {
  Sentence source;
  Sentence target;
};

struct MonolingualExample {
  Sentence sentence;
};

}  // namespace gnmt
