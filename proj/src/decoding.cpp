#include "gnmt/decoding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "gnmt/errors.hpp"
#include "gnmt/training.hpp"

namespace gnmt {

namespace {

struct Candidate {
  double score;
  size_t parent;
  int token;
};

// Deterministic ordering: score desc, then parent, then token.
bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

struct LiveHyp {
  std::vector<int> tokens;
  double score = 0.0;
  BeamScorer::StatePtr state;
};

}  // namespace

int decode_max_len(size_t source_len) { return static_cast<int>(2 * source_len + 5); }

BeamResult beam_search(const BeamScorer& scorer, int beam_width, int max_len, int nbest) {
  if (beam_width < 1) throw ConfigError("beam width must be >= 1");
  const int vocab = scorer.vocab();
  std::vector<LiveHyp> live(1);
  live[0].state = scorer.initial();

  std::vector<Hypothesis> finished;
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<std::pair<BeamScorer::StatePtr, int>> batch;
    batch.reserve(live.size());
    for (const LiveHyp& h : live)
      batch.emplace_back(h.state, h.tokens.empty() ? kBosId : h.tokens.back());
    auto outs = scorer.step(batch);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<size_t>(vocab));
    for (size_t i = 0; i < live.size(); ++i)
      for (int tok = 0; tok < vocab; ++tok)
        cands.push_back({live[i].score + outs[i].log_probs[static_cast<size_t>(tok)], i, tok});
    const size_t keep = std::min(cands.size(), static_cast<size_t>(beam_width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      candidate_less);

    std::vector<LiveHyp> next;
    next.reserve(keep);
    for (size_t k = 0; k < keep; ++k) {
      const Candidate& c = cands[k];
      if (c.token == kEosId) {
        Hypothesis h;
        h.tokens = live[c.parent].tokens;
        h.score = c.score;
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        LiveHyp h;
        h.tokens = live[c.parent].tokens;
        h.tokens.push_back(c.token);
        h.score = c.score;
        h.state = outs[c.parent].state;
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });

  BeamResult res;
  if (!finished.empty()) {
    res.best = finished.front();
    for (size_t i = 0; i < finished.size() && i < static_cast<size_t>(nbest); ++i)
      res.nbest.push_back(finished[i]);
  } else {
    // nothing finished within max_len: return the best unfinished with a flag
    res.unfinished_warning = true;
    const LiveHyp* best = nullptr;
    for (const LiveHyp& h : live)
      if (!best || h.score > best->score) best = &h;
    if (best) {
      res.best.tokens = best->tokens;
      res.best.score = best->score;
      res.best.finished = false;
      res.nbest.push_back(res.best);
    }
  }
  return res;
}

double score_sequence(const BeamScorer& scorer, const std::vector<int>& tokens) {
  BeamScorer::StatePtr state = scorer.initial();
  double total = 0.0;
  int prev = kBosId;
  for (int tok : tokens) {
    auto outs = scorer.step({{state, prev}});
    total += outs[0].log_probs[static_cast<size_t>(tok)];
    state = outs[0].state;
    prev = tok;
  }
  auto outs = scorer.step({{state, prev}});
  total += outs[0].log_probs[kEosId];
  return total;
}

Hypothesis beam_fill(const BeamScorer& scorer, const std::vector<std::optional<int>>& forced,
                     const std::vector<int>& candidates, int beam_width) {
  std::vector<LiveHyp> live(1);
  live[0].state = scorer.initial();
  for (size_t pos = 0; pos <= forced.size(); ++pos) {
    std::vector<std::pair<BeamScorer::StatePtr, int>> batch;
    batch.reserve(live.size());
    for (const LiveHyp& h : live)
      batch.emplace_back(h.state, h.tokens.empty() ? kBosId : h.tokens.back());
    auto outs = scorer.step(batch);

    const bool last = pos == forced.size();
    std::vector<Candidate> cands;
    for (size_t i = 0; i < live.size(); ++i) {
      if (last || forced[pos].has_value()) {
        const int tok = last ? kEosId : *forced[pos];
        cands.push_back({live[i].score + outs[i].log_probs[static_cast<size_t>(tok)], i, tok});
      } else {
        for (int tok : candidates)
          cands.push_back({live[i].score + outs[i].log_probs[static_cast<size_t>(tok)], i, tok});
      }
    }
    const size_t keep = std::min(cands.size(), static_cast<size_t>(beam_width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      candidate_less);
    std::vector<LiveHyp> next;
    next.reserve(keep);
    for (size_t k = 0; k < keep; ++k) {
      const Candidate& c = cands[k];
      LiveHyp h;
      h.tokens = live[c.parent].tokens;
      if (!last) h.tokens.push_back(c.token);
      h.score = c.score;
      h.state = outs[c.parent].state;
      next.push_back(std::move(h));
    }
    live = std::move(next);
  }
  Hypothesis best;
  bool first = true;
  for (const LiveHyp& h : live) {
    if (first || h.score > best.score) {
      best.tokens = h.tokens;
      best.score = h.score;
      best.finished = true;
      first = false;
    }
  }
  return best;
}

nlohmann::json RefinementTrace::to_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const RefinementRound& r : rounds) {
    nlohmann::json j;
    j["z_samples"] = r.z_samples;
    j["const_term"] = r.const_term;
    j["y_surrogate_pre"] = r.y_surrogate_pre;
    j["y_surrogate_post"] = r.y_surrogate_post;
    j["y"] = r.y;
    if (r.has_fill) {
      j["fill_const_term"] = r.fill_const_term;
      j["fill_surrogate_pre"] = r.fill_surrogate_pre;
      j["fill_surrogate_post"] = r.fill_surrogate_post;
      j["fill"] = r.fill;
    }
    rounds_json.push_back(std::move(j));
  }
  return {{"rounds", rounds_json},
          {"converged", converged},
          {"budget_exhausted", budget_exhausted},
          {"beam_warning", beam_warning}};
}

RefinementTrace RefinementTrace::from_json(const nlohmann::json& j) {
  RefinementTrace t;
  t.converged = j.at("converged").get<bool>();
  t.budget_exhausted = j.at("budget_exhausted").get<bool>();
  t.beam_warning = j.at("beam_warning").get<bool>();
  for (const auto& rj : j.at("rounds")) {
    RefinementRound r;
    r.z_samples = rj.at("z_samples").get<std::vector<std::vector<double>>>();
    r.const_term = rj.at("const_term").get<double>();
    r.y_surrogate_pre = rj.at("y_surrogate_pre").get<double>();
    r.y_surrogate_post = rj.at("y_surrogate_post").get<double>();
    r.y = rj.at("y").get<std::vector<int>>();
    if (rj.contains("fill")) {
      r.has_fill = true;
      r.fill_const_term = rj.at("fill_const_term").get<double>();
      r.fill_surrogate_pre = rj.at("fill_surrogate_pre").get<double>();
      r.fill_surrogate_post = rj.at("fill_surrogate_post").get<double>();
      r.fill = rj.at("fill").get<std::vector<int>>();
    }
    t.rounds.push_back(std::move(r));
  }
  return t;
}

namespace {

// Target-side scorer averaging per-step log-probs over the z sample set; the
// hypothesis state carries one decoder state per sample.
class TargetScorer : public BeamScorer {
 public:
  TargetScorer(const GnmtModel& model, int y_lang, std::vector<Tensor> z_samples,
               std::vector<Tensor> enc_mats)
      : model_(model), y_lang_(y_lang), z_(std::move(z_samples)), enc_(std::move(enc_mats)) {}

  struct S : State {
    std::vector<GnmtModel::DecState> per_sample;
  };

  int vocab() const override {
    return static_cast<int>(model_.vocab_size(y_lang_));
  }

  StatePtr initial() const override {
    auto s = std::make_shared<S>();
    s->per_sample.assign(z_.size(), model_.initial_state());
    return s;
  }

  std::vector<StepOut> step(
      const std::vector<std::pair<StatePtr, int>>& batch) const override {
    const size_t n = batch.size();
    const size_t vocab_n = static_cast<size_t>(vocab());
    std::vector<StepOut> outs(n);
    std::vector<std::shared_ptr<S>> new_states(n);
    for (size_t i = 0; i < n; ++i) {
      outs[i].log_probs.assign(vocab_n, 0.0);
      new_states[i] = std::make_shared<S>();
      new_states[i]->per_sample.resize(z_.size());
    }
    const double inv_s = 1.0 / static_cast<double>(z_.size());
    for (size_t s = 0; s < z_.size(); ++s) {
      std::vector<std::pair<const GnmtModel::DecState*, int>> sub;
      sub.reserve(n);
      for (const auto& [state, prev] : batch) {
        const auto* st = static_cast<const S*>(state.get());
        sub.emplace_back(&st->per_sample[s], prev);
      }
      auto stepped = model_.target_step_batch(sub, y_lang_, z_[s], enc_[s]);
      for (size_t i = 0; i < n; ++i) {
        new_states[i]->per_sample[s] = std::move(stepped[i].state);
        for (size_t v = 0; v < vocab_n; ++v)
          outs[i].log_probs[v] += inv_s * stepped[i].log_probs[v];
      }
    }
    for (size_t i = 0; i < n; ++i) outs[i].state = std::move(new_states[i]);
    return outs;
  }

 private:
  const GnmtModel& model_;
  int y_lang_;
  std::vector<Tensor> z_;
  std::vector<Tensor> enc_;
};

// Source-model scorer for the missing-word fill pass.
class SourceScorer : public BeamScorer {
 public:
  SourceScorer(const GnmtModel& model, int lang, std::vector<Tensor> z_samples)
      : model_(model), lang_(lang), z_(std::move(z_samples)) {}

  struct S : State {
    std::vector<GnmtModel::DecState> per_sample;
  };

  int vocab() const override { return static_cast<int>(model_.vocab_size(lang_)); }

  StatePtr initial() const override {
    auto s = std::make_shared<S>();
    s->per_sample.assign(z_.size(), model_.initial_state());
    return s;
  }

  std::vector<StepOut> step(
      const std::vector<std::pair<StatePtr, int>>& batch) const override {
    const size_t n = batch.size();
    const size_t vocab_n = static_cast<size_t>(vocab());
    std::vector<StepOut> outs(n);
    std::vector<std::shared_ptr<S>> new_states(n);
    for (size_t i = 0; i < n; ++i) {
      outs[i].log_probs.assign(vocab_n, 0.0);
      new_states[i] = std::make_shared<S>();
      new_states[i]->per_sample.resize(z_.size());
    }
    const double inv_s = 1.0 / static_cast<double>(z_.size());
    for (size_t s = 0; s < z_.size(); ++s) {
      std::vector<std::pair<const GnmtModel::DecState*, int>> sub;
      sub.reserve(n);
      for (const auto& [state, prev] : batch) {
        const auto* st = static_cast<const S*>(state.get());
        sub.emplace_back(&st->per_sample[s], prev);
      }
      auto stepped = model_.source_step_batch(sub, lang_, z_[s]);
      for (size_t i = 0; i < n; ++i) {
        new_states[i]->per_sample[s] = std::move(stepped[i].state);
        for (size_t v = 0; v < vocab_n; ++v)
          outs[i].log_probs[v] += inv_s * stepped[i].log_probs[v];
      }
    }
    for (size_t i = 0; i < n; ++i) outs[i].state = std::move(new_states[i]);
    return outs;
  }

 private:
  const GnmtModel& model_;
  int lang_;
  std::vector<Tensor> z_;
};

std::vector<Tensor> encode_per_sample(const GnmtModel& model, const std::vector<int>& x,
                                      int x_lang, const std::vector<Tensor>& zs) {
  std::vector<Tensor> enc;
  enc.reserve(zs.size());
  if (model.config().variant == Variant::Vnmt) {
    Tensor shared = model.encode_source_plain(x, x_lang, nullptr);
    for (size_t s = 0; s < zs.size(); ++s) enc.push_back(shared);
  } else {
    for (const Tensor& z : zs) enc.push_back(model.encode_source_plain(x, x_lang, &z));
  }
  return enc;
}

std::vector<std::vector<double>> z_rows(const std::vector<Tensor>& zs) {
  std::vector<std::vector<double>> rows;
  rows.reserve(zs.size());
  for (const Tensor& z : zs) rows.push_back(z.data);
  return rows;
}

}  // namespace

std::vector<Tensor> sample_diag_gaussian(const Gaussian& g, int samples, Rng& rng) {
  std::vector<Tensor> zs;
  zs.reserve(static_cast<size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    Tensor z = Tensor::zeros(1, g.mean.cols());
    for (int64_t j = 0; j < g.mean.cols(); ++j)
      z.at(0, j) = g.mean.at(0, j) + std::exp(0.5 * g.logvar.at(0, j)) * rng.normal();
    zs.push_back(std::move(z));
  }
  return zs;
}

TranslationResult initial_guess(const GnmtModel& model, const std::vector<int>& x, int x_lang,
                                int y_lang, const DecodeOptions& opts) {
  if (x.empty()) throw DataError("initial_guess: empty source");
  const Tensor z0 = Tensor::zeros(1, model.config().z_dim);
  std::vector<Tensor> zs{z0};
  auto enc = encode_per_sample(model, x, x_lang, zs);
  TargetScorer scorer(model, y_lang, std::move(zs), std::move(enc));
  BeamResult r = beam_search(scorer, opts.beam_width, decode_max_len(x.size()), opts.nbest);
  TranslationResult out;
  out.tokens = r.best.tokens;
  out.score = r.best.score;
  out.beam_warning = r.unfinished_warning;
  out.nbest = r.nbest;
  return out;
}

TranslationResult translate_em(const GnmtModel& model, const std::vector<int>& x, int x_lang,
                               int y_lang, const DecodeOptions& opts) {
  if (model.config().variant == Variant::Vnmt)
    throw ConfigError("translate_em requires a joint (gnmt) variant checkpoint");
  if (opts.samples < 1) throw ConfigError("translate_em: samples must be >= 1");
  if (x.empty()) throw DataError("translate_em: empty source");

  Rng rng(opts.seed);
  TranslationResult guess = initial_guess(model, x, x_lang, y_lang, opts);
  TranslationResult out;
  out.beam_warning = guess.beam_warning;
  std::vector<int> y_cur = guess.tokens;
  if (y_cur.empty()) {
    // degenerate guess (empty decode): keep a single BOS-adjacent fallback so
    // q(z|x,y) has a target side to read
    y_cur.push_back(kUnkId);
  }

  const int max_len = decode_max_len(x.size());
  for (int round = 0; round < opts.max_rounds; ++round) {
    // E-like step
    Gaussian q = model.posterior_plain(x, x_lang, y_cur, y_lang);
    std::vector<Tensor> zs = sample_diag_gaussian(q, opts.samples, rng);

    RefinementRound rec;
    rec.z_samples = z_rows(zs);
    double const_term = 0.0;
    for (const Tensor& z : zs)
      const_term += GnmtModel::prior_log_prob(z) + model.source_log_prob_plain(x, x_lang, z);
    const_term /= static_cast<double>(zs.size());
    rec.const_term = const_term;

    // M-like step with the incumbent injected
    auto enc = encode_per_sample(model, x, x_lang, zs);
    TargetScorer scorer(model, y_lang, std::move(zs), std::move(enc));
    const double incumbent = score_sequence(scorer, y_cur);
    rec.y_surrogate_pre = const_term + incumbent;
    BeamResult r = beam_search(scorer, opts.beam_width, max_len, opts.nbest);
    out.beam_warning = out.beam_warning || r.unfinished_warning;

    std::vector<int> y_next = y_cur;
    double best_score = incumbent;
    if (!r.best.tokens.empty() && r.best.finished && r.best.score > incumbent) {
      y_next = r.best.tokens;
      best_score = r.best.score;
    }
    rec.y_surrogate_post = const_term + best_score;
    rec.y = y_next;
    out.trace.rounds.push_back(std::move(rec));
    out.score = const_term + best_score;
    out.nbest = r.nbest;

    if (y_next == y_cur) {
      out.trace.converged = true;
      break;
    }
    y_cur = y_next;
  }
  if (!out.trace.converged) out.trace.budget_exhausted = true;
  out.trace.beam_warning = out.beam_warning;
  out.tokens = y_cur;
  return out;
}

TranslationResult translate_missing(const GnmtModel& model, const MaskedSentence& masked,
                                    int y_lang, const DecodeOptions& opts) {
  if (model.config().variant == Variant::Vnmt)
    throw ConfigError("translate_missing requires a joint (gnmt) variant checkpoint");
  const int x_lang = masked.visible.language;
  if (masked.positions.empty())
    return translate_em(model, masked.visible.tokens, x_lang, y_lang, opts);

  Rng rng(opts.seed);
  // Initial guess: masked slots hold UNK, then decode y at the prior mean.
  std::vector<int> x_cur = masked.visible.tokens;
  for (int64_t p : masked.positions) x_cur[static_cast<size_t>(p)] = kUnkId;
  TranslationResult guess = initial_guess(model, x_cur, x_lang, y_lang, opts);
  TranslationResult out;
  out.beam_warning = guess.beam_warning;
  std::vector<int> y_cur = guess.tokens.empty() ? std::vector<int>{kUnkId} : guess.tokens;

  // fill candidates: every non-reserved source token
  std::vector<int> candidates;
  for (int v = kNumReserved; v < static_cast<int>(model.vocab_size(x_lang)); ++v)
    candidates.push_back(v);

  const int max_len = decode_max_len(masked.visible.tokens.size());
  for (int round = 0; round < opts.max_rounds; ++round) {
    Gaussian q = model.posterior_plain(x_cur, x_lang, y_cur, y_lang);
    std::vector<Tensor> zs = sample_diag_gaussian(q, opts.samples, rng);

    RefinementRound rec;
    rec.has_fill = true;
    rec.z_samples = z_rows(zs);
    double mean_log_pz = 0.0;
    for (const Tensor& z : zs) mean_log_pz += GnmtModel::prior_log_prob(z);
    mean_log_pz /= static_cast<double>(zs.size());

    // M-step (1): refill the masked slots, visible tokens forced
    SourceScorer src_scorer(model, x_lang, zs);
    std::vector<std::optional<int>> forced(masked.visible.tokens.size());
    for (size_t i = 0; i < masked.visible.tokens.size(); ++i)
      if (masked.visible.tokens[i] != kMaskId) forced[i] = masked.visible.tokens[i];
    rec.fill_const_term = mean_log_pz;
    const double fill_incumbent = score_sequence(src_scorer, x_cur);
    rec.fill_surrogate_pre = mean_log_pz + fill_incumbent;
    Hypothesis filled = beam_fill(src_scorer, forced, candidates, opts.beam_width);
    std::vector<int> x_next = x_cur;
    double fill_best = fill_incumbent;
    if (!filled.tokens.empty() && filled.score > fill_incumbent) {
      x_next = filled.tokens;
      fill_best = filled.score;
    }
    rec.fill_surrogate_post = mean_log_pz + fill_best;
    for (int64_t p : masked.positions) rec.fill.push_back(x_next[static_cast<size_t>(p)]);

    // M-step (2): re-decode y against the updated source
    auto enc = encode_per_sample(model, x_next, x_lang, zs);
    double const_term = mean_log_pz;
    for (const Tensor& z : zs)
      const_term += model.source_log_prob_plain(x_next, x_lang, z) / static_cast<double>(zs.size());
    rec.const_term = const_term;
    TargetScorer scorer(model, y_lang, std::move(zs), std::move(enc));
    const double incumbent = score_sequence(scorer, y_cur);
    rec.y_surrogate_pre = const_term + incumbent;
    BeamResult r = beam_search(scorer, opts.beam_width, max_len, opts.nbest);
    out.beam_warning = out.beam_warning || r.unfinished_warning;
    std::vector<int> y_next = y_cur;
    double best_score = incumbent;
    if (!r.best.tokens.empty() && r.best.finished && r.best.score > incumbent) {
      y_next = r.best.tokens;
      best_score = r.best.score;
    }
    rec.y_surrogate_post = const_term + best_score;
    rec.y = y_next;
    out.trace.rounds.push_back(std::move(rec));
    out.score = const_term + best_score;
    out.nbest = r.nbest;

    const bool stable = x_next == x_cur && y_next == y_cur;
    x_cur = x_next;
    y_cur = y_next;
    if (stable) {
      out.trace.converged = true;
      break;
    }
  }
  if (!out.trace.converged) out.trace.budget_exhausted = true;
  out.trace.beam_warning = out.beam_warning;
  out.tokens = y_cur;
  for (int64_t p : masked.positions) out.fill.push_back(x_cur[static_cast<size_t>(p)]);
  return out;
}

TranslationResult translate_conditional(const GnmtModel& model, const std::vector<int>& x,
                                        int x_lang, int y_lang, const DecodeOptions& opts) {
  if (model.config().variant != Variant::Vnmt)
    throw ConfigError("translate_conditional requires a vnmt checkpoint");
  if (x.empty()) throw DataError("translate_conditional: empty source");
  Rng rng(opts.seed);
  Gaussian prior = model.vnmt_prior_plain(x, x_lang);
  std::vector<Tensor> zs = sample_diag_gaussian(prior, opts.samples, rng);
  auto enc = encode_per_sample(model, x, x_lang, zs);
  TargetScorer scorer(model, y_lang, std::move(zs), std::move(enc));
  BeamResult r = beam_search(scorer, opts.beam_width, decode_max_len(x.size()), opts.nbest);
  TranslationResult out;
  out.tokens = r.best.tokens;
  out.score = r.best.score;
  out.beam_warning = r.unfinished_warning;
  out.nbest = r.nbest;
  return out;
}

TranslationResult pivot_translate(const GnmtModel& first_leg, const GnmtModel& second_leg,
                                  const std::vector<int>& x, int x_lang, int via_lang, int y_lang,
                                  const DecodeOptions& opts) {
  auto decode_with = [&](const GnmtModel& m, const std::vector<int>& src, int sl, int tl,
                         uint64_t seed) {
    DecodeOptions o = opts;
    o.seed = seed;
    if (m.config().variant == Variant::Vnmt) return translate_conditional(m, src, sl, tl, o);
    return translate_em(m, src, sl, tl, o);
  };
  if (via_lang == y_lang) return decode_with(first_leg, x, x_lang, y_lang, opts.seed);

  TranslationResult hop1 = decode_with(first_leg, x, x_lang, via_lang, opts.seed);
  if (hop1.tokens.empty()) {
    TranslationResult out;
    out.beam_warning = true;
    return out;
  }
  TranslationResult hop2 = decode_with(second_leg, hop1.tokens, via_lang, y_lang, opts.seed + 1);
  hop2.intermediate = hop1.tokens;
  hop2.beam_warning = hop2.beam_warning || hop1.beam_warning;
  return hop2;
}

void decode_parallel(size_t count, int workers, const std::function<void(size_t)>& decode_one) {
  if (workers <= 1 || count <= 1) {
    for (size_t i = 0; i < count; ++i) decode_one(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= count) return;
      decode_one(i);
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(count));
  pool.reserve(static_cast<size_t>(n));
  for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace gnmt
