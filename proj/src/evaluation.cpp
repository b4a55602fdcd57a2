#include "gnmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "gnmt/errors.hpp"
#include "gnmt/format.hpp"
#include "gnmt/training.hpp"

namespace gnmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int64_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (size_t i = 0; i + n <= tokens.size(); ++i)
    out[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                 tokens.begin() + static_cast<long>(i + n))] += 1;
  return out;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw DataError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw DataError("corpus_bleu: hypothesis/reference count mismatch");

  BleuReport rep;
  rep.sentence_count = static_cast<int64_t>(hypotheses.size());
  std::array<int64_t, 4> matched{};
  std::array<int64_t, 4> total{};
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    rep.hypothesis_length += static_cast<int64_t>(hypotheses[i].size());
    rep.reference_length += static_cast<int64_t>(references[i].size());
    for (size_t n = 1; n <= 4; ++n) {
      const NgramCounts h = ngrams(hypotheses[i], n);
      const NgramCounts r = ngrams(references[i], n);
      for (const auto& [gram, count] : h) {
        total[n - 1] += count;
        auto it = r.find(gram);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);  // clipped
      }
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (size_t n = 1; n <= 4; ++n) {
    double p;
    if (n == 1) {
      p = total[0] > 0 ? static_cast<double>(matched[0]) / static_cast<double>(total[0]) : 0.0;
    } else if (matched[n - 1] == 0) {
      p = 1.0 / static_cast<double>(total[n - 1] + 1);  // add-one smoothing
    } else {
      p = static_cast<double>(matched[n - 1]) / static_cast<double>(total[n - 1]);
    }
    rep.precisions[n - 1] = p;
    if (p <= 0.0)
      zero = true;
    else
      log_sum += std::log(p);
  }

  rep.brevity_penalty =
      rep.hypothesis_length < rep.reference_length && rep.hypothesis_length > 0
          ? std::exp(1.0 - static_cast<double>(rep.reference_length) /
                               static_cast<double>(rep.hypothesis_length))
          : (rep.hypothesis_length == 0 ? 0.0 : 1.0);
  rep.bleu = zero ? 0.0 : 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

LengthBinnedReport bleu_by_length(const std::vector<std::vector<std::string>>& hypotheses,
                                  const std::vector<std::vector<std::string>>& references,
                                  const std::vector<int64_t>& source_lengths,
                                  std::vector<int64_t> edges) {
  if (hypotheses.size() != references.size() || hypotheses.size() != source_lengths.size())
    throw DataError("bleu_by_length: misaligned inputs");
  std::sort(edges.begin(), edges.end());

  LengthBinnedReport rep;
  rep.edges = edges;
  int64_t lo = 1;
  std::vector<std::pair<int64_t, int64_t>> ranges;
  for (int64_t e : edges) {
    ranges.emplace_back(lo, e);
    lo = e + 1;
  }
  ranges.emplace_back(lo, std::numeric_limits<int64_t>::max());

  for (const auto& [blo, bhi] : ranges) {
    std::vector<std::vector<std::string>> h, r;
    for (size_t i = 0; i < hypotheses.size(); ++i)
      if (source_lengths[i] >= blo && source_lengths[i] <= bhi) {
        h.push_back(hypotheses[i]);
        r.push_back(references[i]);
      }
    if (h.empty()) continue;  // empty bins are absent, not zero
    LengthBin bin;
    bin.lo = blo;
    bin.hi = bhi;
    const int64_t width = edges.empty() ? 10 : (edges.size() > 1 ? edges[1] - edges[0] : edges[0]);
    bin.mid = bhi == std::numeric_limits<int64_t>::max()
                  ? static_cast<double>(blo) + static_cast<double>(width) / 2.0 - 0.5
                  : (static_cast<double>(blo) + static_cast<double>(bhi)) / 2.0;
    bin.count = static_cast<int64_t>(h.size());
    bin.report = corpus_bleu(h, r);
    rep.bins.push_back(std::move(bin));
  }
  return rep;
}

KlReport kl_reliance(const GnmtModel& model, const std::vector<ParallelExample>& test_set) {
  KlReport rep;
  const bool vnmt = model.config().variant == Variant::Vnmt;
  double sum = 0.0, sum_standard = 0.0;
  for (const ParallelExample& ex : test_set) {
    const Gaussian q = model.posterior_plain(ex.source.tokens, ex.source.language,
                                             ex.target.tokens, ex.target.language);
    if (vnmt) {
      const Gaussian p = model.vnmt_prior_plain(ex.source.tokens, ex.source.language);
      sum += kl_diag_gaussians_value(q, p);
      sum_standard += kl_standard_normal_value(q);
    } else {
      sum += kl_standard_normal_value(q);
    }
    rep.count += 1;
  }
  if (rep.count > 0) {
    rep.mean_kl = sum / static_cast<double>(rep.count);
    if (vnmt) rep.mean_kl_vs_standard_normal = sum_standard / static_cast<double>(rep.count);
  }
  return rep;
}

namespace {
std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write report: " + path);
  return os;
}
}  // namespace

void emit_bleu_csv(const std::string& path,
                   const std::vector<std::pair<std::string, BleuReport>>& systems) {
  auto os = open_out(path);
  os << "system,bleu,p1,p2,p3,p4,brevity_penalty,hyp_length,ref_length,sentences\n";
  for (const auto& [name, r] : systems) {
    os << name << ',' << format_double(r.bleu) << ',' << format_double(r.precisions[0]) << ','
       << format_double(r.precisions[1]) << ',' << format_double(r.precisions[2]) << ','
       << format_double(r.precisions[3]) << ',' << format_double(r.brevity_penalty) << ','
       << r.hypothesis_length << ',' << r.reference_length << ',' << r.sentence_count << '\n';
  }
}

void emit_length_csv(const std::string& path,
                     const std::vector<std::pair<std::string, LengthBinnedReport>>& systems) {
  auto os = open_out(path);
  os << "bin_mid,bleu,count,system,bin_lo,bin_hi\n";
  for (const auto& [name, rep] : systems) {
    for (const LengthBin& b : rep.bins) {
      os << format_double(b.mid, 1) << ',' << format_double(b.report.bleu) << ',' << b.count << ','
         << name << ',' << b.lo << ','
         << (b.hi == std::numeric_limits<int64_t>::max() ? std::string("inf")
                                                         : std::to_string(b.hi))
         << '\n';
    }
  }
}

void emit_kl_csv(const std::string& path,
                 const std::vector<std::pair<std::string, KlReport>>& systems) {
  auto os = open_out(path);
  os << "system,mean_kl,mean_kl_vs_standard_normal,sentences\n";
  for (const auto& [name, r] : systems) {
    os << name << ',' << format_double(r.mean_kl) << ','
       << (r.mean_kl_vs_standard_normal ? format_double(*r.mean_kl_vs_standard_normal)
                                        : std::string(""))
       << ',' << r.count << '\n';
  }
}

std::vector<std::pair<std::string, BleuReport>> parse_bleu_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read report: " + path);
  std::vector<std::pair<std::string, BleuReport>> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw DataError("bad bleu csv row: " + line);
    BleuReport r;
    r.bleu = std::stod(cells[1]);
    for (int n = 0; n < 4; ++n) r.precisions[static_cast<size_t>(n)] = std::stod(cells[2 + n]);
    r.brevity_penalty = std::stod(cells[6]);
    r.hypothesis_length = std::stoll(cells[7]);
    r.reference_length = std::stoll(cells[8]);
    r.sentence_count = std::stoll(cells[9]);
    out.emplace_back(cells[0], r);
  }
  return out;
}

namespace {
std::string pad(const std::string& s, size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}
}  // namespace

std::string render_bleu_table(const std::vector<std::pair<std::string, BleuReport>>& systems) {
  std::ostringstream os;
  os << pad("system", 18) << pad("BLEU", 9) << pad("BP", 8) << pad("p1", 8) << pad("p2", 8)
     << pad("p3", 8) << pad("p4", 8) << "sents\n";
  for (const auto& [name, r] : systems) {
    os << pad(name, 18) << pad(format_double(r.bleu, 2), 9)
       << pad(format_double(r.brevity_penalty, 3), 8);
    for (double p : r.precisions) os << pad(format_double(p, 3), 8);
    os << r.sentence_count << '\n';
  }
  return os.str();
}

std::string render_length_table(
    const std::vector<std::pair<std::string, LengthBinnedReport>>& systems) {
  std::ostringstream os;
  os << pad("system", 18) << pad("bin", 12) << pad("BLEU", 9) << "count\n";
  for (const auto& [name, rep] : systems)
    for (const LengthBin& b : rep.bins) {
      const std::string label =
          std::to_string(b.lo) + "-" +
          (b.hi == std::numeric_limits<int64_t>::max() ? "" : std::to_string(b.hi));
      os << pad(name, 18) << pad(label, 12) << pad(format_double(b.report.bleu, 2), 9) << b.count
         << '\n';
    }
  return os.str();
}

std::string render_kl_table(const std::vector<std::pair<std::string, KlReport>>& systems) {
  std::ostringstream os;
  os << pad("system", 18) << pad("mean KL", 12) << pad("KL vs N(0,I)", 14) << "sents\n";
  for (const auto& [name, r] : systems) {
    os << pad(name, 18) << pad(format_double(r.mean_kl, 4), 12)
       << pad(r.mean_kl_vs_standard_normal ? format_double(*r.mean_kl_vs_standard_normal, 4)
                                           : std::string("-"),
              14)
       << r.count << '\n';
  }
  return os.str();
}

}  // namespace gnmt
