#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnmt/param_store.hpp"
#include "gnmt/rng.hpp"
#include "gnmt/tape.hpp"
#include "gnmt/vocab.hpp"

#include "json.hpp"

namespace gnmt {

enum class Variant { Gnmt, GnmtMulti, Vnmt };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::Gnmt;
  int64_t z_dim = 100;
  int64_t hidden_dim = 1000;
  int64_t embed_dim = 300;
  std::vector<int64_t> vocab_sizes;  // per language, reserved ids included

  int language_count() const { return static_cast<int>(vocab_sizes.size()); }
  bool multilingual() const { return variant == Variant::GnmtMulti; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Diagonal Gaussian, plain-tensor form (decode side).
struct Gaussian {
  Tensor mean;    // 1 x z
  Tensor logvar;  // 1 x z
};

// Graph-handle form (training side).
struct GaussianVal {
  Val mean;
  Val logvar;
};

struct SeqLogProb {
  Val total;                   // 1x1, includes the EOS term
  std::vector<Val> per_token;  // length T+1
};

struct EncStates {
  Val mat;  // T x 2H, forward and backward halves concatenated per position
  int64_t length = 0;
};

// The joint model p(z) p(x|z) p(y|z,x), its inference network q(z|x,y), the
// multilingual variant with language one-hots, and the VNMT-style conditional
// baseline (learned prior p(z|x), no source likelihood). All builders append
// to a caller-owned tape so the same math serves training and decoding.
class GnmtModel {
 public:
  explicit GnmtModel(ModelConfig cfg);

  // Uniform [-0.08, 0.08] weights, zero biases with forget-gate bias +1.
  void init_params(Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // log p(x | z [, l_x]): teacher-forced source decoder over BOS-shifted x.
  // `teacher_inputs`, when given, replaces the shifted input tokens (word
  // dropout); it must have length T+1 and start with BOS.
  SeqLogProb source_log_prob(Tape& t, std::span<const int> tokens, int lang, Val z,
                             std::span<const int> teacher_inputs = {}) const;

  // Bidirectional encoder; z is concatenated into each step for GNMT variants
  // and absent for VNMT.
  EncStates encode_source(Tape& t, std::span<const int> tokens, int lang,
                          std::optional<Val> z) const;

  // Additive attention scoring v.tanh(Wd h_dec + We h_enc_s); returns
  // (context 1x2H, weights 1xT).
  std::pair<Val, Val> attention(Tape& t, Val h_dec_prev, Val enc_mat) const;

  // log p(y | z, x [, l_x, l_y]) given precomputed encoder states.
  SeqLogProb target_log_prob(Tape& t, std::span<const int> y_tokens, int y_lang,
                             const EncStates& enc, Val z,
                             std::span<const int> teacher_inputs = {}) const;
  // Convenience overload that encodes x itself.
  SeqLogProb target_log_prob(Tape& t, std::span<const int> y_tokens, int y_lang,
                             std::span<const int> x_tokens, int x_lang, Val z) const;

  // q(z|x,y): separate bidirectional LSTMs over x and y (no z, no language
  // one-hots), mean-pooled, concatenated, then linear mean/log-variance maps.
  GaussianVal infer_posterior(Tape& t, std::span<const int> x_tokens, int x_lang,
                              std::span<const int> y_tokens, int y_lang) const;

  // VNMT-only learned prior p(z|x) from the mean-pooled encoder states.
  GaussianVal vnmt_prior(Tape& t, std::span<const int> x_tokens, int x_lang) const;

  // log N(z; 0, I)
  static double prior_log_prob(const Tensor& z);

  // ----- decode-side helpers (plain tensors, throwaway internal tapes) -----
  Tensor encode_source_plain(std::span<const int> tokens, int lang, const Tensor* z) const;
  Gaussian posterior_plain(std::span<const int> x, int x_lang, std::span<const int> y,
                           int y_lang) const;
  Gaussian vnmt_prior_plain(std::span<const int> x, int x_lang) const;
  double source_log_prob_plain(std::span<const int> tokens, int lang, const Tensor& z) const;

  struct DecState {
    Tensor h, c;
  };
  struct StepOut {
    DecState state;
    std::vector<double> log_probs;  // over the language's vocabulary
  };
  DecState initial_state() const;
  // One target-decoder step for a batch of (state, previous token) pairs
  // sharing z and encoder states; one internal tape for the whole batch.
  std::vector<StepOut> target_step_batch(const std::vector<std::pair<const DecState*, int>>& batch,
                                         int y_lang, const Tensor& z, const Tensor& enc_mat) const;
  std::vector<StepOut> source_step_batch(const std::vector<std::pair<const DecState*, int>>& batch,
                                         int lang, const Tensor& z) const;

  int64_t vocab_size(int lang) const { return cfg_.vocab_sizes[static_cast<size_t>(lang)]; }

 private:
  Val lang_one_hot(Tape& t, int lang) const;
  Val embed_tok(Tape& t, int lang, int token) const;
  std::vector<Val> bilstm_states(Tape& t, std::span<const int> tokens, int lang,
                                 const std::string& fwd_prefix, const std::string& bwd_prefix,
                                 std::optional<Val> z, bool with_one_hot) const;
  Val token_log_dist(Tape& t, Val hidden, const std::string& out_name, Val emb_table_T) const;
  void require_variant(bool ok, const std::string& what) const;

  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace gnmt
