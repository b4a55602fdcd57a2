#include "gnmt/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "gnmt/errors.hpp"

namespace gnmt {

const char* const kUnkText = "<unk>";
const char* const kBosText = "<s>";
const char* const kEosText = "</s>";
const char* const kPadText = "<pad>";
const char* const kMaskText = "<mask>";

Vocabulary::Vocabulary() : tokens_{kUnkText, kBosText, kEosText, kPadText} {}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, size_t cap) {
  if (cap < 1) throw ConfigError("vocabulary cap must be >= 1");
  bool any = false;
  std::unordered_map<std::string, std::pair<int64_t, int64_t>> stats;  // count, first-seen
  int64_t order = 0;
  for (const auto& sent : corpus) {
    for (const auto& tok : sent) {
      any = true;
      auto [it, inserted] = stats.emplace(tok, std::make_pair(int64_t{0}, order));
      it->second.first += 1;
      ++order;
    }
  }
  if (!any) throw DataError("build_vocabulary: empty corpus");

  std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> sorted(stats.begin(),
                                                                          stats.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;  // earlier-seen wins ties
  });

  Vocabulary v;
  for (size_t i = 0; i < sorted.size() && i < cap; ++i) v.add_token(sorted[i].first);
  return v;
}

void Vocabulary::add_token(const std::string& token) {
  if (id_.count(token)) return;
  id_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = id_.find(token);
  return it == id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id == kMaskId) {
    static const std::string mask = kMaskText;
    return mask;
  }
  if (id < 0 || id >= size()) throw DataError("token_of: id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_of(id));
  return out;
}

void Vocabulary::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write vocabulary: " + path);
  for (size_t i = kNumReserved; i < tokens_.size(); ++i) os << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read vocabulary: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add_token(line);
  }
  return v;
}

}  // namespace gnmt
