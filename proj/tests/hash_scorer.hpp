#pragma once

// Deterministic autoregressive toy scorer shared by the decoding tests and
// the acceptance suite: the distribution for position k+1 is a hash of the
// tokens consumed so far, so exhaustive enumeration is a valid oracle.

#include <cmath>
#include <memory>
#include <vector>

#include "gnmt/decoding.hpp"
#include "gnmt/rng.hpp"
#include "gnmt/vocab.hpp"

namespace gnmt::testing {

class HashScorer : public BeamScorer {
 public:
  HashScorer(int vocab, uint64_t seed, double eos_boost = 0.0)
      : vocab_(vocab), seed_(seed), eos_boost_(eos_boost) {}

  struct S : State {
    std::vector<int> prefix;
    bool started = false;  // position is tracked here, not inferred from BOS
  };

  int vocab() const override { return vocab_; }
  StatePtr initial() const override { return std::make_shared<S>(); }

  std::vector<double> dist(const std::vector<int>& prefix) const {
    uint64_t h = seed_;
    for (int t : prefix) h = h * 1099511628211ULL + static_cast<uint64_t>(t + 7);
    Rng rng(h);
    std::vector<double> logits(static_cast<size_t>(vocab_));
    for (auto& v : logits) v = rng.uniform(-3, 3);
    logits[kEosId] += eos_boost_;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (auto& v : logits) v -= lse;
    return logits;
  }

  std::vector<StepOut> step(
      const std::vector<std::pair<StatePtr, int>>& batch) const override {
    std::vector<StepOut> outs;
    outs.reserve(batch.size());
    for (const auto& [state, prev] : batch) {
      const auto* s = static_cast<const S*>(state.get());
      auto ns = std::make_shared<S>();
      ns->started = true;
      if (s->started) {
        ns->prefix = s->prefix;
        ns->prefix.push_back(prev);
      }
      StepOut o;
      o.log_probs = dist(ns->prefix);
      o.state = std::move(ns);
      outs.push_back(std::move(o));
    }
    return outs;
  }

 private:
  int vocab_;
  uint64_t seed_;
  double eos_boost_;
};

// Exhaustive enumeration over all EOS-terminated sequences of up to max_len
// steps (EOS occupies the final step).
inline void enumerate_best(const HashScorer& s, std::vector<int>& prefix, double score,
                           int max_len, std::vector<int>& best, double& best_score) {
  const auto d = s.dist(prefix);
  if (score + d[kEosId] > best_score) {
    best_score = score + d[kEosId];
    best = prefix;
  }
  if (static_cast<int>(prefix.size()) + 1 >= max_len) return;
  for (int tok = 0; tok < s.vocab(); ++tok) {
    if (tok == kEosId) continue;
    prefix.push_back(tok);
    enumerate_best(s, prefix, score + d[static_cast<size_t>(tok)], max_len, best, best_score);
    prefix.pop_back();
  }
}

}  // namespace gnmt::testing
