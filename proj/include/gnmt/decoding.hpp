#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "gnmt/corpus.hpp"
#include "gnmt/model.hpp"

#include "json.hpp"

namespace gnmt {

struct Hypothesis {
  std::vector<int> tokens;  // EOS excluded; `finished` marks that EOS was consumed
  double score = 0.0;       // sum of per-step log-probs, EOS step included when finished
  bool finished = false;
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> nbest;      // finished hypotheses, best first
  bool unfinished_warning = false;    // nothing finished within max_len
};

// Batched step scorer: one call per beam step covering every live hypothesis,
// so model parameters are staged once per step.
class BeamScorer {
 public:
  struct State {
    virtual ~State() = default;
  };
  using StatePtr = std::shared_ptr<const State>;
  struct StepOut {
    StatePtr state;
    std::vector<double> log_probs;  // full distribution over next tokens
  };

  virtual ~BeamScorer() = default;
  virtual int vocab() const = 0;
  virtual StatePtr initial() const = 0;
  virtual std::vector<StepOut> step(
      const std::vector<std::pair<StatePtr, int>>& states_and_prev_tokens) const = 0;
};

// Standard beam expansion; finished hypotheses leave the beam and are
// retained; stops when the beam empties or max_len is reached. Ties break by
// (parent index, token id) so results are reproducible.
BeamResult beam_search(const BeamScorer& scorer, int beam_width, int max_len, int nbest = 1);

// Total score of a fixed sequence under the scorer (EOS step included).
double score_sequence(const BeamScorer& scorer, const std::vector<int>& tokens);

// Constrained left-to-right pass of fixed length: forced positions consume
// the given token; free positions expand over `candidates`. The EOS step is
// always forced last and included in the score.
Hypothesis beam_fill(const BeamScorer& scorer, const std::vector<std::optional<int>>& forced,
                     const std::vector<int>& candidates, int beam_width);

struct RefinementRound {
  std::vector<std::vector<double>> z_samples;
  // y-step surrogate: (1/S) sum_s [log p(z_s) + log p(x|z_s)] is constant in y
  // and recorded separately from the beam-searched part.
  double const_term = 0.0;
  double y_surrogate_pre = 0.0;   // incumbent y under this round's samples
  double y_surrogate_post = 0.0;  // after the M-step (incumbent injected)
  std::vector<int> y;
  // missing-word fill step (Algorithm 2 M-step 1)
  bool has_fill = false;
  double fill_const_term = 0.0;
  double fill_surrogate_pre = 0.0;
  double fill_surrogate_post = 0.0;
  std::vector<int> fill;  // chosen tokens at the masked positions
};

struct RefinementTrace {
  std::vector<RefinementRound> rounds;
  bool converged = false;
  bool budget_exhausted = false;
  bool beam_warning = false;

  nlohmann::json to_json() const;
  static RefinementTrace from_json(const nlohmann::json& j);
};

struct DecodeOptions {
  int samples = 10;    // S
  int beam_width = 8;
  int max_rounds = 8;
  int nbest = 1;
  uint64_t seed = 1;
};

// max_len rule used by every decode: 2*T_x + 5.
int decode_max_len(size_t source_len);

// z = mu + sigma * eps draws, one tensor per sample.
std::vector<Tensor> sample_diag_gaussian(const Gaussian& g, int samples, Rng& rng);

struct TranslationResult {
  std::vector<int> tokens;
  double score = 0.0;
  bool beam_warning = false;
  RefinementTrace trace;
  std::vector<int> fill;          // missing mode
  std::vector<int> intermediate;  // pivot mode
  std::vector<Hypothesis> nbest;
};

// Deterministic first guess: beam decode of p(y | z=0, x) at the prior mean.
TranslationResult initial_guess(const GnmtModel& model, const std::vector<int>& x, int x_lang,
                                int y_lang, const DecodeOptions& opts);

// Algorithm 1: alternate sampling z ~ q(z|x,y) with beam re-decoding of y
// under the sample-averaged score, incumbent injected, until y is stable or
// the round budget runs out.
TranslationResult translate_em(const GnmtModel& model, const std::vector<int>& x, int x_lang,
                               int y_lang, const DecodeOptions& opts);

// Algorithm 2: masked source positions are first filled by a constrained beam
// pass over the source model, then y is re-decoded as in translate_em.
// Degrades to translate_em when nothing is masked.
TranslationResult translate_missing(const GnmtModel& model, const MaskedSentence& masked,
                                    int y_lang, const DecodeOptions& opts);

// VNMT decoding: samples z from the learned prior p(z|x), single beam pass.
TranslationResult translate_conditional(const GnmtModel& model, const std::vector<int>& x,
                                        int x_lang, int y_lang, const DecodeOptions& opts);

// Two-hop decode through `via`; `via == y_lang` collapses to a single pass.
// Both hops run on the given models (the same model twice for multilingual).
TranslationResult pivot_translate(const GnmtModel& first_leg, const GnmtModel& second_leg,
                                  const std::vector<int>& x, int x_lang, int via_lang, int y_lang,
                                  const DecodeOptions& opts);

// Decodes `count` inputs with `workers` threads; each input gets its own rng
// stream derived from (opts.seed, index), and outputs keep input order.
void decode_parallel(size_t count, int workers, const std::function<void(size_t)>& decode_one);

}  // namespace gnmt
