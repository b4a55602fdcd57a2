#include "gnmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gnmt/errors.hpp"

namespace gnmt {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

const char* reject_reason_name(RejectReason r) {
  return r == RejectReason::TooLong ? "too-long" : "too-unknown";
}

namespace {

std::optional<RejectReason> side_filter(const std::vector<int>& ids,
                                        const PreprocessLimits& limits) {
  if (ids.size() > limits.max_len) return RejectReason::TooLong;
  size_t unk = 0;
  for (int id : ids) unk += id == kUnkId ? 1 : 0;
  if (!ids.empty() &&
      static_cast<double>(unk) / static_cast<double>(ids.size()) > limits.max_unk_fraction)
    return RejectReason::TooUnknown;
  return std::nullopt;
}

}  // namespace

PreprocessOutcome preprocess_pair(const std::string& src_line, const std::string& tgt_line,
                                  const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                  int src_lang, int tgt_lang, const PreprocessLimits& limits) {
  const std::vector<int> src_ids = src_vocab.encode(tokenize(src_line));
  const std::vector<int> tgt_ids = tgt_vocab.encode(tokenize(tgt_line));
  if (src_ids.empty() || tgt_ids.empty()) return RejectReason::TooLong;  // degenerate blank line
  if (src_ids.size() > limits.max_len || tgt_ids.size() > limits.max_len)
    return RejectReason::TooLong;
  if (auto r = side_filter(src_ids, limits)) return *r;
  if (auto r = side_filter(tgt_ids, limits)) return *r;
  ParallelExample ex;
  ex.source = Sentence{src_ids, src_lang};
  ex.target = Sentence{tgt_ids, tgt_lang};
  return ex;
}

std::variant<Sentence, RejectReason> preprocess_mono(const std::string& line,
                                                     const Vocabulary& vocab, int lang,
                                                     const PreprocessLimits& limits) {
  const std::vector<int> ids = vocab.encode(tokenize(line));
  if (ids.empty()) return RejectReason::TooLong;
  if (auto r = side_filter(ids, limits)) return *r;
  return Sentence{ids, lang};
}

MaskedSentence mask_words(const Sentence& s, double rate, Rng& rng) {
  if (s.tokens.size() < 2) throw DataError("mask_words: sentence shorter than 2 tokens");
  if (rate <= 0.0 || rate >= 1.0) throw ConfigError("mask_words: rate must be in (0,1)");
  const size_t n = s.tokens.size();
  // round-half-up of rate * n
  const size_t k = static_cast<size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  // partial Fisher-Yates: first k entries are the masked positions
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_int(n - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<int64_t> positions(idx.begin(), idx.begin() + static_cast<long>(k));
  std::sort(positions.begin(), positions.end());

  MaskedSentence out;
  out.visible = s;
  for (int64_t p : positions) {
    out.hidden.push_back(s.tokens[static_cast<size_t>(p)]);
    out.visible.tokens[static_cast<size_t>(p)] = kMaskId;
  }
  out.positions = std::move(positions);
  return out;
}

std::string render_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::ostringstream os;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) os << ' ';
    os << vocab.token_of(ids[i]);
  }
  return os.str();
}

BatchIterator::BatchIterator(std::vector<ParallelExample> paired,
                             std::vector<MonolingualExample> mono, BatchMode mode,
                             size_t batch_size, Rng rng, int ratio_paired, int ratio_mono)
    : paired_(std::move(paired)),
      mono_(std::move(mono)),
      mode_(mode),
      batch_size_(batch_size),
      rng_(rng),
      ratio_paired_(ratio_paired),
      ratio_mono_(ratio_mono) {
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  if ((mode_ == BatchMode::Paired || mode_ == BatchMode::Mixed) && paired_.empty())
    throw DataError("batch_iterator: no paired examples");
  if ((mode_ == BatchMode::Monolingual || mode_ == BatchMode::Mixed) && mono_.empty())
    throw DataError("batch_iterator: no monolingual examples");
  start_epoch();
}

void BatchIterator::start_epoch() {
  paired_order_.resize(paired_.size());
  for (size_t i = 0; i < paired_.size(); ++i) paired_order_[i] = i;
  rng_.shuffle(paired_order_);
  mono_order_.resize(mono_.size());
  for (size_t i = 0; i < mono_.size(); ++i) mono_order_[i] = i;
  rng_.shuffle(mono_order_);
  paired_pos_ = 0;
  mono_pos_ = 0;
  cycle_ = 0;
}

namespace {
void pad_rows(std::vector<std::vector<int>>& rows) {
  size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  for (auto& r : rows) r.resize(width, kPadId);
}
}  // namespace

Batch BatchIterator::make_paired_batch() {
  Batch b;
  b.monolingual = false;
  while (b.src.size() < batch_size_ && paired_pos_ < paired_order_.size()) {
    const ParallelExample& ex = paired_[paired_order_[paired_pos_++]];
    b.src.push_back(ex.source.tokens);
    b.tgt.push_back(ex.target.tokens);
    b.src_len.push_back(static_cast<int>(ex.source.tokens.size()));
    b.tgt_len.push_back(static_cast<int>(ex.target.tokens.size()));
    b.src_lang.push_back(ex.source.language);
    b.tgt_lang.push_back(ex.target.language);
  }
  pad_rows(b.src);
  pad_rows(b.tgt);
  return b;
}

Batch BatchIterator::make_mono_batch() {
  Batch b;
  b.monolingual = true;
  while (b.src.size() < batch_size_) {
    if (mono_pos_ >= mono_order_.size()) {  // cycle, reshuffled
      rng_.shuffle(mono_order_);
      mono_pos_ = 0;
    }
    const MonolingualExample& ex = mono_[mono_order_[mono_pos_++]];
    b.src.push_back(ex.sentence.tokens);
    b.tgt.push_back(ex.sentence.tokens);
    b.src_len.push_back(static_cast<int>(ex.sentence.tokens.size()));
    b.tgt_len.push_back(static_cast<int>(ex.sentence.tokens.size()));
    b.src_lang.push_back(ex.sentence.language);
    b.tgt_lang.push_back(ex.sentence.language);
  }
  pad_rows(b.src);
  pad_rows(b.tgt);
  return b;
}

std::optional<Batch> BatchIterator::next() {
  switch (mode_) {
    case BatchMode::Paired:
      if (paired_pos_ >= paired_order_.size()) return std::nullopt;
      return make_paired_batch();
    case BatchMode::Monolingual:
      if (mono_pos_ >= mono_order_.size()) return std::nullopt;
      {
        // finite epoch over the monolingual pool, no cycling
        Batch b;
        b.monolingual = true;
        while (b.src.size() < batch_size_ && mono_pos_ < mono_order_.size()) {
          const MonolingualExample& ex = mono_[mono_order_[mono_pos_++]];
          b.src.push_back(ex.sentence.tokens);
          b.tgt.push_back(ex.sentence.tokens);
          b.src_len.push_back(static_cast<int>(ex.sentence.tokens.size()));
          b.tgt_len.push_back(static_cast<int>(ex.sentence.tokens.size()));
          b.src_lang.push_back(ex.sentence.language);
          b.tgt_lang.push_back(ex.sentence.language);
        }
        pad_rows(b.src);
        pad_rows(b.tgt);
        return b;
      }
    case BatchMode::Mixed: {
      if (paired_pos_ >= paired_order_.size()) return std::nullopt;
      const bool mono_turn = cycle_ >= ratio_paired_;
      cycle_ = (cycle_ + 1) % (ratio_paired_ + ratio_mono_);
      return mono_turn ? make_mono_batch() : make_paired_batch();
    }
  }
  return std::nullopt;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write file: " + path);
  for (const auto& l : lines) os << l << '\n';
}

}  // namespace gnmt
