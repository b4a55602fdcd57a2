#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "gnmt/model.hpp"

namespace gnmt {

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  int64_t hypothesis_length = 0;
  int64_t reference_length = 0;
  int64_t sentence_count = 0;
};

// Corpus BLEU with modified (clipped) n-gram precision up to 4-grams and
// brevity penalty exp(1 - r/c) for c < r. Smoothing is add-one on a
// higher-order precision only when its raw clipped count is zero:
// p_n = 1/(d_n + 1) for n >= 2 with m_n = 0. No smoothing on unigrams.
BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references);

struct LengthBin {
  int64_t lo = 0;       // inclusive
  int64_t hi = 0;       // inclusive; INT64_MAX for the open last bin
  double mid = 0.0;
  int64_t count = 0;
  BleuReport report;
};

struct LengthBinnedReport {
  std::vector<int64_t> edges;
  std::vector<LengthBin> bins;  // empty bins are absent
};

// Per-bin corpus BLEU where bins partition source lengths at the given edges
// (defaults {10,20,30,40,50}).
LengthBinnedReport bleu_by_length(const std::vector<std::vector<std::string>>& hypotheses,
                                  const std::vector<std::vector<std::string>>& references,
                                  const std::vector<int64_t>& source_lengths,
                                  std::vector<int64_t> edges = {10, 20, 30, 40, 50});

struct KlReport {
  // For joint variants: mean KL(q(z|x,y) || N(0,I)). For VNMT the headline
  // number is measured against its learned prior p(z|x), and the N(0,I)
  // column is reported alongside.
  double mean_kl = 0.0;
  std::optional<double> mean_kl_vs_standard_normal;
  int64_t count = 0;
};

KlReport kl_reliance(const GnmtModel& model, const std::vector<ParallelExample>& test_set);

// CSV emission: deterministic column order, dot decimal separator always.
void emit_bleu_csv(const std::string& path,
                   const std::vector<std::pair<std::string, BleuReport>>& systems);
void emit_length_csv(const std::string& path,
                     const std::vector<std::pair<std::string, LengthBinnedReport>>& systems);
void emit_kl_csv(const std::string& path,
                 const std::vector<std::pair<std::string, KlReport>>& systems);

std::vector<std::pair<std::string, BleuReport>> parse_bleu_csv(const std::string& path);

// Aligned text tables for terminal output.
std::string render_bleu_table(const std::vector<std::pair<std::string, BleuReport>>& systems);
std::string render_length_table(
    const std::vector<std::pair<std::string, LengthBinnedReport>>& systems);
std::string render_kl_table(const std::vector<std::pair<std::string, KlReport>>& systems);

}  // namespace gnmt
