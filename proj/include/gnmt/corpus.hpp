#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gnmt/rng.hpp"
#include "gnmt/vocab.hpp"

namespace gnmt {

// Lowercases (byte-wise) and splits on whitespace.
std::vector<std::string> tokenize(const std::string& line);

struct PreprocessLimits {
  size_t max_len = 50;
  double max_unk_fraction = 0.10;  // strictly-greater-than rejects
};

enum class RejectReason { TooLong, TooUnknown };
const char* reject_reason_name(RejectReason r);

using PreprocessOutcome = std::variant<ParallelExample, RejectReason>;

// Lowercase, encode with UNK substitution, and filter. Both filters apply to
// the tokenized, UNK-replaced form; a too-long side is reported before a
// too-unknown one.
PreprocessOutcome preprocess_pair(const std::string& src_line, const std::string& tgt_line,
                                  const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                  int src_lang, int tgt_lang,
                                  const PreprocessLimits& limits = {});

std::variant<Sentence, RejectReason> preprocess_mono(const std::string& line,
                                                     const Vocabulary& vocab, int lang,
                                                     const PreprocessLimits& limits = {});

struct MaskedSentence {
  Sentence visible;                 // kMaskId at masked positions
  std::vector<int64_t> positions;   // ascending
  std::vector<int> hidden;          // original tokens at those positions
};

// Replaces round(rate * len) positions (chosen uniformly without replacement)
// with the mask sentinel. Requires len >= 2 and 0 < rate < 1.
MaskedSentence mask_words(const Sentence& s, double rate, Rng& rng);

// Renders ids as text, mask sentinel included.
std::string render_tokens(const std::vector<int>& ids, const Vocabulary& vocab);

enum class BatchMode { Paired, Monolingual, Mixed };

struct Batch {
  bool monolingual = false;
  // Padded to the longest sentence in the batch; true lengths alongside.
  std::vector<std::vector<int>> src, tgt;
  std::vector<int> src_len, tgt_len;
  std::vector<int> src_lang, tgt_lang;
  size_t size() const { return src.size(); }
};

// Epoch-scoped batch stream. Paired and monolingual pools are reshuffled per
// epoch; mixed mode interleaves `ratio_paired` paired batches then
// `ratio_mono` monolingual ones, cycling the monolingual pool as needed. An
// epoch ends when the paired pool (or the monolingual pool, in monolingual
// mode) is exhausted.
class BatchIterator {
 public:
  BatchIterator(std::vector<ParallelExample> paired, std::vector<MonolingualExample> mono,
                BatchMode mode, size_t batch_size, Rng rng, int ratio_paired = 1,
                int ratio_mono = 1);

  std::optional<Batch> next();  // nullopt at epoch end
  void start_epoch();           // reshuffles and rewinds

 private:
  Batch make_paired_batch();
  Batch make_mono_batch();

  std::vector<ParallelExample> paired_;
  std::vector<MonolingualExample> mono_;
  BatchMode mode_;
  size_t batch_size_;
  Rng rng_;
  int ratio_paired_, ratio_mono_;
  std::vector<size_t> paired_order_, mono_order_;
  size_t paired_pos_ = 0, mono_pos_ = 0;
  int cycle_ = 0;  // position within the paired/mono interleave cycle
};

// File helpers shared by preprocessing and the toy generator.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

}  // namespace gnmt
