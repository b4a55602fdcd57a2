#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gnmt/decoding.hpp"
#include "gnmt/errors.hpp"
#include "gnmt/training.hpp"
#include "hash_scorer.hpp"

using namespace gnmt;

using gnmt::testing::HashScorer;
using gnmt::testing::enumerate_best;

TEST_CASE("beam width 1 equals greedy decoding") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    HashScorer s(6, seed, 1.5);
    BeamResult beam = beam_search(s, 1, 12);

    // greedy reference
    std::vector<int> prefix;
    double score = 0;
    bool finished = false;
    for (int step = 0; step < 12 && !finished; ++step) {
      const auto d = s.dist(prefix);
      int arg = 0;
      for (int t = 1; t < 6; ++t)
        if (d[static_cast<size_t>(t)] > d[static_cast<size_t>(arg)]) arg = t;
      score += d[static_cast<size_t>(arg)];
      if (arg == kEosId) {
        finished = true;
      } else {
        prefix.push_back(arg);
      }
    }
    if (finished) {
      CHECK_FALSE(beam.unfinished_warning);
      CHECK(beam.best.tokens == prefix);
      CHECK(beam.best.score == doctest::Approx(score).epsilon(1e-12));
    } else {
      CHECK(beam.unfinished_warning);
    }
  }
}

TEST_CASE("beam search equals exhaustive enumeration on tiny instances") {
  // vocab 5, max-len 3, beam 125 >= V^max-len: every sequence survives
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    HashScorer s(5, seed * 31 + 1);
    BeamResult beam = beam_search(s, 125, 3);
    std::vector<int> prefix, best;
    double best_score = -1e300;
    enumerate_best(s, prefix, 0.0, 3, best, best_score);
    REQUIRE_FALSE(beam.unfinished_warning);
    CHECK(beam.best.tokens == best);
    CHECK(beam.best.score == doctest::Approx(best_score).epsilon(1e-12));
  }
}

namespace {
// Scorer that puts probability ~1 on one fixed token per step.
class FixedSeqScorer : public BeamScorer {
 public:
  explicit FixedSeqScorer(std::vector<int> seq) : seq_(std::move(seq)) {}
  struct S : State {
    size_t pos = 0;
    bool started = false;
  };
  int vocab() const override { return 8; }
  StatePtr initial() const override { return std::make_shared<S>(); }
  std::vector<StepOut> step(
      const std::vector<std::pair<StatePtr, int>>& batch) const override {
    std::vector<StepOut> outs;
    for (const auto& [state, prev] : batch) {
      const auto* s = static_cast<const S*>(state.get());
      auto ns = std::make_shared<S>();
      ns->started = true;
      ns->pos = s->started ? s->pos + 1 : 0;
      const int want = ns->pos < seq_.size() ? seq_[ns->pos] : kEosId;
      StepOut o;
      o.log_probs.assign(8, -745.0);  // ~ log(double-min)
      o.log_probs[static_cast<size_t>(want)] = 0.0;
      o.state = std::move(ns);
      outs.push_back(std::move(o));
    }
    return outs;
  }

 private:
  std::vector<int> seq_;
};
}  // namespace

TEST_CASE("a deterministic scorer yields its sequence with score zero") {
  FixedSeqScorer s({4, 6, 5});
  BeamResult r = beam_search(s, 4, 20);
  CHECK(r.best.tokens == std::vector<int>{4, 6, 5});
  CHECK(r.best.score == doctest::Approx(0.0));
  CHECK(r.best.finished);
}

TEST_CASE("no finishing hypothesis returns best unfinished with a warning") {
  // EOS strongly suppressed: nothing can finish in 4 steps
  HashScorer s(5, 3, -1000.0);
  BeamResult r = beam_search(s, 3, 4);
  CHECK(r.unfinished_warning);
  CHECK_FALSE(r.best.finished);
  CHECK(r.best.tokens.size() == 4);
}

TEST_CASE("beam output score equals re-scoring the returned sequence") {
  for (uint64_t seed = 2; seed <= 20; ++seed) {
    HashScorer s(6, seed, 1.0);
    BeamResult r = beam_search(s, 4, 16);
    if (r.unfinished_warning) continue;
    CHECK(std::fabs(score_sequence(s, r.best.tokens) - r.best.score) < 1e-9);
  }
}

TEST_CASE("beam_fill forces visible positions and fills free slots") {
  HashScorer s(6, 9);
  std::vector<std::optional<int>> forced{4, std::nullopt, 5};
  Hypothesis h = beam_fill(s, forced, {3, 4, 5}, 64);
  REQUIRE(h.tokens.size() == 3);
  CHECK(h.tokens[0] == 4);
  CHECK(h.tokens[2] == 5);
  CHECK((h.tokens[1] == 3 || h.tokens[1] == 4 || h.tokens[1] == 5));
  // exhaustive over the free slot
  double best = -1e300;
  int best_tok = -1;
  for (int tok : {3, 4, 5}) {
    std::vector<int> seq{4, tok, 5};
    const double sc = score_sequence(s, seq);
    if (sc > best) {
      best = sc;
      best_tok = tok;
    }
  }
  CHECK(h.tokens[1] == best_tok);
  CHECK(h.score == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("sampling a collapsed gaussian returns its mean") {
  Gaussian g;
  g.mean = Tensor::row({0.7, -1.3});
  g.logvar = Tensor::row({-60.0, -60.0});
  Rng rng(5);
  auto zs = sample_diag_gaussian(g, 3, rng);
  for (const Tensor& z : zs) {
    CHECK(z.at(0, 0) == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(z.at(0, 1) == doctest::Approx(-1.3).epsilon(1e-10));
  }
}

// ---- decodes against a small overfit model ----

namespace {

struct Fixture {
  ModelConfig cfg;
  GnmtModel model;
  std::vector<ParallelExample> data;

  Fixture() : cfg(make_cfg()), model(cfg), data(make_data()) {
    Rng rng(71);
    model.init_params(rng);
    TrainConfig tc;
    tc.kl_anneal_iterations = 150;
    tc.learning_rate = 5e-3;
    tc.word_dropout_rate = 0.1;
    tc.batch_size = 6;
    TrainState st;
    st.noise_rng = Rng(13);
    Batch b;
    for (const auto& ex : data) {
      b.src.push_back(ex.source.tokens);
      b.tgt.push_back(ex.target.tokens);
      b.src_len.push_back(static_cast<int>(ex.source.tokens.size()));
      b.tgt_len.push_back(static_cast<int>(ex.target.tokens.size()));
      b.src_lang.push_back(0);
      b.tgt_lang.push_back(1);
    }
    for (auto& row : b.src) row.resize(4, kPadId);
    for (auto& row : b.tgt) row.resize(4, kPadId);
    for (int i = 0; i < 700; ++i) train_step(model, b, st, tc);
  }

  static ModelConfig make_cfg() {
    ModelConfig c;
    c.variant = Variant::Gnmt;
    c.hidden_dim = 16;
    c.embed_dim = 8;
    c.z_dim = 3;
    c.vocab_sizes = {11, 11};
    return c;
  }

  static std::vector<ParallelExample> make_data() {
    // word-for-word reversible mapping: tgt token = src token + 1 (mod range)
    std::vector<ParallelExample> out;
    const std::vector<std::vector<int>> srcs{{4, 5, 6}, {5, 6, 7}, {6, 7},   {7, 8, 9},
                                             {8, 9},    {9, 4, 5}};
    for (const auto& s : srcs) {
      ParallelExample ex;
      ex.source = Sentence{s, 0};
      std::vector<int> t;
      for (int tok : s) t.push_back(tok == 10 ? 4 : tok + 1);
      ex.target = Sentence{t, 1};
      out.push_back(ex);
    }
    return out;
  }

  static const Fixture& get() {
    static Fixture f;
    return f;
  }
};

}  // namespace

TEST_CASE("initial guess is deterministic") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.beam_width = 4;
  auto a = initial_guess(f.model, {4, 5, 6}, 0, 1, opts);
  auto b = initial_guess(f.model, {4, 5, 6}, 0, 1, opts);
  CHECK(a.tokens == b.tokens);
  CHECK(a.score == b.score);
}

TEST_CASE("initial guess propagates the unfinished-beam warning") {
  // zero weights: uniform log-probs, so beam 1 greedily repeats token 0 (ties
  // break by token id) and never emits EOS within the length budget
  ModelConfig c = Fixture::make_cfg();
  GnmtModel m(c);
  DecodeOptions opts;
  opts.beam_width = 1;
  auto r = initial_guess(m, {4, 5}, 0, 1, opts);
  CHECK(r.beam_warning);
  CHECK(r.tokens.size() == static_cast<size_t>(decode_max_len(2)));
}

TEST_CASE("the overfit model reproduces memorized targets from the initial guess") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.beam_width = 4;
  int hits = 0;
  for (const auto& ex : f.data) {
    auto r = initial_guess(f.model, ex.source.tokens, 0, 1, opts);
    hits += r.tokens == ex.target.tokens ? 1 : 0;
  }
  CHECK(hits >= 5);  // of 6
}

TEST_CASE("translate_em converges, is deterministic, and logs monotone M-steps") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 6;
  opts.beam_width = 4;
  opts.max_rounds = 6;
  opts.seed = 99;
  for (const auto& ex : f.data) {
    auto r = translate_em(f.model, ex.source.tokens, 0, 1, opts);
    CHECK((r.trace.converged || r.trace.budget_exhausted));
    REQUIRE(!r.trace.rounds.empty());
    for (const auto& round : r.trace.rounds)
      CHECK(round.y_surrogate_post >= round.y_surrogate_pre - 1e-12);
    auto again = translate_em(f.model, ex.source.tokens, 0, 1, opts);
    CHECK(again.tokens == r.tokens);
    CHECK(again.trace.rounds.size() == r.trace.rounds.size());
  }
}

TEST_CASE("max-rounds 1 is initial guess plus a single refinement") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 4;
  opts.beam_width = 4;
  opts.max_rounds = 1;
  opts.seed = 3;
  auto r = translate_em(f.model, {5, 6, 7}, 0, 1, opts);
  CHECK(r.trace.rounds.size() == 1);
}

TEST_CASE("translate_missing with no masked positions equals translate_em") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 5;
  opts.beam_width = 4;
  opts.seed = 42;
  MaskedSentence ms;
  ms.visible = Sentence{{6, 7}, 0};
  auto a = translate_missing(f.model, ms, 1, opts);
  auto b = translate_em(f.model, {6, 7}, 0, 1, opts);
  CHECK(a.tokens == b.tokens);
  CHECK(a.fill.empty());
}

TEST_CASE("translate_missing fills masked slots with in-vocabulary words and logs monotone fills") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 5;
  opts.beam_width = 6;
  opts.seed = 17;
  Rng mask_rng(3);
  MaskedSentence ms = mask_words(Sentence{{7, 8, 9}, 0}, 0.34, mask_rng);
  REQUIRE(ms.positions.size() == 1);
  auto r = translate_missing(f.model, ms, 1, opts);
  REQUIRE(r.fill.size() == 1);
  CHECK(r.fill[0] >= kNumReserved);
  for (const auto& round : r.trace.rounds) {
    REQUIRE(round.has_fill);
    CHECK(round.fill_surrogate_post >= round.fill_surrogate_pre - 1e-12);
    CHECK(round.y_surrogate_post >= round.y_surrogate_pre - 1e-12);
  }
  // the overfit model recovers the memorized missing token
  CHECK(r.fill[0] == ms.hidden[0]);
}

TEST_CASE("refinement traces survive a json round trip") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 3;
  opts.beam_width = 4;
  opts.seed = 5;
  auto r = translate_em(f.model, {8, 9}, 0, 1, opts);
  auto back = RefinementTrace::from_json(r.trace.to_json());
  CHECK(back.rounds.size() == r.trace.rounds.size());
  CHECK(back.converged == r.trace.converged);
  for (size_t i = 0; i < back.rounds.size(); ++i) {
    CHECK(back.rounds[i].y == r.trace.rounds[i].y);
    CHECK(back.rounds[i].y_surrogate_post ==
          doctest::Approx(r.trace.rounds[i].y_surrogate_post));
  }
}

TEST_CASE("pivot through the target language is a single pass") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 4;
  opts.beam_width = 4;
  opts.seed = 7;
  auto direct = translate_em(f.model, {4, 5, 6}, 0, 1, opts);
  auto pivot = pivot_translate(f.model, f.model, {4, 5, 6}, 0, 1, 1, opts);
  CHECK(pivot.tokens == direct.tokens);
  CHECK(pivot.intermediate.empty());
}

TEST_CASE("variant mismatches are rejected") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  CHECK_THROWS_AS(translate_conditional(f.model, {4, 5}, 0, 1, opts), ConfigError);

  ModelConfig vc = Fixture::make_cfg();
  vc.variant = Variant::Vnmt;
  GnmtModel vnmt(vc);
  Rng rng(5);
  vnmt.init_params(rng);
  CHECK_THROWS_AS(translate_em(vnmt, {4, 5}, 0, 1, opts), ConfigError);
  MaskedSentence ms;
  ms.visible = Sentence{{4, 5}, 0};
  CHECK_THROWS_AS(translate_missing(vnmt, ms, 1, opts), ConfigError);

  // conditional decode on the vnmt variant runs and is deterministic
  DecodeOptions copts;
  copts.samples = 3;
  copts.beam_width = 3;
  copts.seed = 11;
  auto a = translate_conditional(vnmt, {4, 5}, 0, 1, copts);
  auto b = translate_conditional(vnmt, {4, 5}, 0, 1, copts);
  CHECK(a.tokens == b.tokens);
}

TEST_CASE("parallel decode preserves input order and results") {
  const auto& f = Fixture::get();
  DecodeOptions opts;
  opts.samples = 3;
  opts.beam_width = 3;
  std::vector<std::vector<int>> inputs{{4, 5, 6}, {5, 6}, {6, 7, 8}, {7, 8}, {8, 9, 4}};
  auto run = [&](int workers) {
    std::vector<std::vector<int>> outs(inputs.size());
    decode_parallel(inputs.size(), workers, [&](size_t i) {
      DecodeOptions o = opts;
      o.seed = Rng(opts.seed).split(i).state()[0];
      outs[i] = translate_em(f.model, inputs[i], 0, 1, o).tokens;
    });
    return outs;
  };
  CHECK(run(1) == run(4));
}
