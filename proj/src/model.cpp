#include "gnmt/model.hpp"

#include <cmath>

#include "gnmt/errors.hpp"

namespace gnmt {

namespace {
constexpr double kInitRange = 0.08;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Gnmt: return "gnmt";
    case Variant::GnmtMulti: return "gnmt-multi";
    case Variant::Vnmt: return "vnmt";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "gnmt") return Variant::Gnmt;
  if (name == "gnmt-multi") return Variant::GnmtMulti;
  if (name == "vnmt") return Variant::Vnmt;
  throw ConfigError("unknown model variant: " + name);
}

void ModelConfig::validate() const {
  if (z_dim < 1 || hidden_dim < 1 || embed_dim < 1)
    throw ConfigError("model dims must be >= 1");
  if (vocab_sizes.size() < 2) throw ConfigError("model needs at least 2 languages");
  for (int64_t v : vocab_sizes)
    if (v < kNumReserved + 1) throw ConfigError("vocab size too small");
  if (variant == Variant::Vnmt && vocab_sizes.size() != 2)
    throw ConfigError("vnmt variant is bilingual");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"z_dim", z_dim},
          {"hidden_dim", hidden_dim},
          {"embed_dim", embed_dim},
          {"vocab_sizes", vocab_sizes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.z_dim = j.at("z_dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.embed_dim = j.at("embed_dim").get<int64_t>();
  c.vocab_sizes = j.at("vocab_sizes").get<std::vector<int64_t>>();
  c.validate();
  return c;
}

GnmtModel::GnmtModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t H = cfg_.hidden_dim, E = cfg_.embed_dim, Z = cfg_.z_dim;
  const int64_t L = cfg_.multilingual() ? cfg_.language_count() : 0;

  for (int l = 0; l < cfg_.language_count(); ++l)
    params_.create("emb.lang" + std::to_string(l),
                   Tensor::zeros(cfg_.vocab_sizes[static_cast<size_t>(l)], E));

  auto lstm = [&](const std::string& prefix, int64_t extra_in) {
    params_.create(prefix + ".W", Tensor::zeros(H + extra_in, 4 * H));
    params_.create(prefix + ".b", Tensor::zeros(1, 4 * H));
  };

  if (cfg_.variant != Variant::Vnmt) {
    lstm("src_dec", E + L + Z);
    params_.create("src_dec.out", Tensor::zeros(H, E));
  }
  const int64_t enc_extra = cfg_.variant == Variant::Vnmt ? E : E + L + Z;
  lstm("enc.fwd", enc_extra);
  lstm("enc.bwd", enc_extra);

  lstm("tgt_dec", E + L + Z + 2 * H);
  params_.create("tgt_dec.out", Tensor::zeros(H, E));
  params_.create("attn.Wd", Tensor::zeros(H, H));
  params_.create("attn.We", Tensor::zeros(2 * H, H));
  params_.create("attn.v", Tensor::zeros(H, 1));

  lstm("inf.x.fwd", E);
  lstm("inf.x.bwd", E);
  lstm("inf.y.fwd", E);
  lstm("inf.y.bwd", E);
  params_.create("inf.mu.W", Tensor::zeros(4 * H, Z));
  params_.create("inf.logvar.W", Tensor::zeros(4 * H, Z));

  if (cfg_.variant == Variant::Vnmt) {
    params_.create("prior.mu.W", Tensor::zeros(2 * H, Z));
    params_.create("prior.logvar.W", Tensor::zeros(2 * H, Z));
  }
}

void GnmtModel::init_params(Rng& rng) {
  const int64_t H = cfg_.hidden_dim;
  for (const std::string& name : params_.names()) {
    Tensor& t = params_.value(name);
    const bool is_bias = name.size() > 2 && name.substr(name.size() - 2) == ".b";
    if (is_bias) {
      t.fill(0.0);
      for (int64_t j = H; j < 2 * H; ++j) t.at(0, j) = 1.0;  // forget gate
    } else {
      for (auto& v : t.data) v = rng.uniform(-kInitRange, kInitRange);
    }
  }
}

Val GnmtModel::lang_one_hot(Tape& t, int lang) const {
  LanguageId id{lang, cfg_.language_count()};
  return t.leaf(Tensor::row(id.one_hot()));
}

Val GnmtModel::embed_tok(Tape& t, int lang, int token) const {
  Val table = t.param(const_cast<ParameterStore&>(params_), "emb.lang" + std::to_string(lang));
  const int ids[1] = {token};
  return t.embed(table, ids);
}

void GnmtModel::require_variant(bool ok, const std::string& what) const {
  if (!ok)
    throw ConfigError(what + " not available for variant " +
                      std::string(variant_name(cfg_.variant)));
}

Val GnmtModel::token_log_dist(Tape& t, Val hidden, const std::string& out_name,
                              Val emb_table_T) const {
  auto& ps = const_cast<ParameterStore&>(params_);
  Val proj = t.matmul(hidden, t.param(ps, out_name));  // 1 x E
  Val logits = t.matmul(proj, emb_table_T);            // 1 x V
  return t.log_softmax(logits);
}

SeqLogProb GnmtModel::source_log_prob(Tape& t, std::span<const int> tokens, int lang, Val z,
                                      std::span<const int> teacher_inputs) const {
  require_variant(cfg_.variant != Variant::Vnmt, "source_log_prob");
  if (tokens.empty()) throw DataError("source_log_prob: empty sentence");
  if (z.v().cols() != cfg_.z_dim)
    throw ShapeError("source_log_prob: z is " + z.v().shape_str());
  auto& ps = const_cast<ParameterStore&>(params_);
  const int64_t T = static_cast<int64_t>(tokens.size());
  if (!teacher_inputs.empty() && static_cast<int64_t>(teacher_inputs.size()) != T + 1)
    throw ShapeError("source_log_prob: teacher inputs must be length T+1");

  Val w = t.param(ps, "src_dec.W");
  Val b = t.param(ps, "src_dec.b");
  Val table_T = t.transpose(t.param(ps, "emb.lang" + std::to_string(lang)));
  std::optional<Val> one_hot;
  if (cfg_.multilingual()) one_hot = lang_one_hot(t, lang);

  Val h = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
  Val c = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
  SeqLogProb out;
  Val total = t.constant(0.0);
  for (int64_t step = 0; step <= T; ++step) {
    const int input_tok = teacher_inputs.empty()
                              ? (step == 0 ? kBosId : tokens[static_cast<size_t>(step - 1)])
                              : teacher_inputs[static_cast<size_t>(step)];
    std::vector<Val> ins{embed_tok(t, lang, input_tok)};
    if (one_hot) ins.push_back(*one_hot);
    ins.push_back(z);
    auto s = lstm_step(t, w, b, cfg_.hidden_dim, h, c, ins);
    h = s.hidden;
    c = s.cell;
    Val lp = token_log_dist(t, h, "src_dec.out", table_T);
    const int target = step < T ? tokens[static_cast<size_t>(step)] : kEosId;
    Val tok_lp = t.slice_cols(lp, target, target + 1);
    out.per_token.push_back(tok_lp);
    total = t.add(total, tok_lp);
  }
  out.total = total;
  return out;
}

std::vector<Val> GnmtModel::bilstm_states(Tape& t, std::span<const int> tokens, int lang,
                                          const std::string& fwd_prefix,
                                          const std::string& bwd_prefix, std::optional<Val> z,
                                          bool with_one_hot) const {
  auto& ps = const_cast<ParameterStore&>(params_);
  const int64_t T = static_cast<int64_t>(tokens.size());
  std::optional<Val> one_hot;
  if (with_one_hot) one_hot = lang_one_hot(t, lang);

  auto run = [&](const std::string& prefix, bool reverse) {
    Val w = t.param(ps, prefix + ".W");
    Val b = t.param(ps, prefix + ".b");
    Val h = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
    Val c = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
    std::vector<Val> states(static_cast<size_t>(T));
    for (int64_t i = 0; i < T; ++i) {
      const int64_t pos = reverse ? T - 1 - i : i;
      std::vector<Val> ins{embed_tok(t, lang, tokens[static_cast<size_t>(pos)])};
      if (one_hot) ins.push_back(*one_hot);
      if (z) ins.push_back(*z);
      auto s = lstm_step(t, w, b, cfg_.hidden_dim, h, c, ins);
      h = s.hidden;
      c = s.cell;
      states[static_cast<size_t>(pos)] = h;
    }
    return states;
  };
  auto fwd = run(fwd_prefix, false);
  auto bwd = run(bwd_prefix, true);
  std::vector<Val> rows(static_cast<size_t>(T));
  for (int64_t i = 0; i < T; ++i)
    rows[static_cast<size_t>(i)] =
        t.concat({fwd[static_cast<size_t>(i)], bwd[static_cast<size_t>(i)]}, 1);
  return rows;
}

EncStates GnmtModel::encode_source(Tape& t, std::span<const int> tokens, int lang,
                                   std::optional<Val> z) const {
  if (tokens.empty()) throw DataError("encode_source: empty sentence");
  if (cfg_.variant == Variant::Vnmt && z)
    throw ConfigError("encode_source: vnmt encoder takes no z");
  if (cfg_.variant != Variant::Vnmt && !z)
    throw ConfigError("encode_source: gnmt encoder requires z");
  auto rows = bilstm_states(t, tokens, lang, "enc.fwd", "enc.bwd", z, cfg_.multilingual());
  EncStates es;
  es.mat = t.concat(rows, 0);
  es.length = static_cast<int64_t>(tokens.size());
  return es;
}

std::pair<Val, Val> GnmtModel::attention(Tape& t, Val h_dec_prev, Val enc_mat) const {
  if (enc_mat.v().rows() < 1) throw DataError("attention: no encoder states");
  auto& ps = const_cast<ParameterStore&>(params_);
  // Additive scoring of the attention decoder this model builds on:
  // score_s = v . tanh(Wd h_dec + We h_enc_s). A purely linear score over
  // [h_dec, h_enc_s] would cancel its decoder half in the softmax and give
  // every target position the same attention distribution.
  Val dec_part = t.matmul(h_dec_prev, t.param(ps, "attn.Wd"));   // 1 x H
  Val enc_part = t.matmul(enc_mat, t.param(ps, "attn.We"));      // T x H
  Val hidden = t.tanh(t.add(enc_part, dec_part));                // broadcast over rows
  Val scores = t.transpose(t.matmul(hidden, t.param(ps, "attn.v")));  // 1 x T
  Val alpha = t.softmax(scores);
  Val context = t.matmul(alpha, enc_mat);                        // 1 x 2H
  return {context, alpha};
}

SeqLogProb GnmtModel::target_log_prob(Tape& t, std::span<const int> y_tokens, int y_lang,
                                      const EncStates& enc, Val z,
                                      std::span<const int> teacher_inputs) const {
  if (y_tokens.empty()) throw DataError("target_log_prob: empty sentence");
  auto& ps = const_cast<ParameterStore&>(params_);
  const int64_t T = static_cast<int64_t>(y_tokens.size());
  if (!teacher_inputs.empty() && static_cast<int64_t>(teacher_inputs.size()) != T + 1)
    throw ShapeError("target_log_prob: teacher inputs must be length T+1");

  Val w = t.param(ps, "tgt_dec.W");
  Val b = t.param(ps, "tgt_dec.b");
  Val table_T = t.transpose(t.param(ps, "emb.lang" + std::to_string(y_lang)));
  std::optional<Val> one_hot;
  if (cfg_.multilingual()) one_hot = lang_one_hot(t, y_lang);

  Val h = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
  Val c = t.leaf(Tensor::zeros(1, cfg_.hidden_dim));
  SeqLogProb out;
  Val total = t.constant(0.0);
  for (int64_t step = 0; step <= T; ++step) {
    auto [context, alpha] = attention(t, h, enc.mat);
    const int input_tok = teacher_inputs.empty()
                              ? (step == 0 ? kBosId : y_tokens[static_cast<size_t>(step - 1)])
                              : teacher_inputs[static_cast<size_t>(step)];
    std::vector<Val> ins{embed_tok(t, y_lang, input_tok)};
    if (one_hot) ins.push_back(*one_hot);
    ins.push_back(z);
    ins.push_back(context);
    auto s = lstm_step(t, w, b, cfg_.hidden_dim, h, c, ins);
    h = s.hidden;
    c = s.cell;
    Val lp = token_log_dist(t, h, "tgt_dec.out", table_T);
    const int target = step < T ? y_tokens[static_cast<size_t>(step)] : kEosId;
    Val tok_lp = t.slice_cols(lp, target, target + 1);
    out.per_token.push_back(tok_lp);
    total = t.add(total, tok_lp);
  }
  out.total = total;
  return out;
}

SeqLogProb GnmtModel::target_log_prob(Tape& t, std::span<const int> y_tokens, int y_lang,
                                      std::span<const int> x_tokens, int x_lang, Val z) const {
  std::optional<Val> enc_z;
  if (cfg_.variant != Variant::Vnmt) enc_z = z;
  EncStates enc = encode_source(t, x_tokens, x_lang, enc_z);
  return target_log_prob(t, y_tokens, y_lang, enc, z);
}

GaussianVal GnmtModel::infer_posterior(Tape& t, std::span<const int> x_tokens, int x_lang,
                                       std::span<const int> y_tokens, int y_lang) const {
  if (x_tokens.empty() || y_tokens.empty()) throw DataError("infer_posterior: empty sentence");
  auto& ps = const_cast<ParameterStore&>(params_);
  auto x_rows = bilstm_states(t, x_tokens, x_lang, "inf.x.fwd", "inf.x.bwd", std::nullopt, false);
  auto y_rows = bilstm_states(t, y_tokens, y_lang, "inf.y.fwd", "inf.y.bwd", std::nullopt, false);
  Val x_pool = t.mean(t.concat(x_rows, 0), 0);  // 1 x 2H
  Val y_pool = t.mean(t.concat(y_rows, 0), 0);
  Val h_inf = t.concat({x_pool, y_pool}, 1);    // 1 x 4H
  GaussianVal g;
  g.mean = t.matmul(h_inf, t.param(ps, "inf.mu.W"));
  g.logvar = t.matmul(h_inf, t.param(ps, "inf.logvar.W"));
  return g;
}

GaussianVal GnmtModel::vnmt_prior(Tape& t, std::span<const int> x_tokens, int x_lang) const {
  require_variant(cfg_.variant == Variant::Vnmt, "vnmt_prior");
  auto& ps = const_cast<ParameterStore&>(params_);
  EncStates enc = encode_source(t, x_tokens, x_lang, std::nullopt);
  Val pooled = t.mean(enc.mat, 0);  // 1 x 2H
  GaussianVal g;
  g.mean = t.matmul(pooled, t.param(ps, "prior.mu.W"));
  g.logvar = t.matmul(pooled, t.param(ps, "prior.logvar.W"));
  return g;
}

double GnmtModel::prior_log_prob(const Tensor& z) {
  double sq = 0.0;
  for (double v : z.data) sq += v * v;
  return -0.5 * static_cast<double>(z.numel()) * std::log(kTwoPi) - 0.5 * sq;
}

Tensor GnmtModel::encode_source_plain(std::span<const int> tokens, int lang,
                                      const Tensor* z) const {
  Tape t;
  std::optional<Val> zv;
  if (z) zv = t.leaf(*z);
  return encode_source(t, tokens, lang, zv).mat.v();
}

Gaussian GnmtModel::posterior_plain(std::span<const int> x, int x_lang, std::span<const int> y,
                                    int y_lang) const {
  Tape t;
  GaussianVal g = infer_posterior(t, x, x_lang, y, y_lang);
  return Gaussian{g.mean.v(), g.logvar.v()};
}

Gaussian GnmtModel::vnmt_prior_plain(std::span<const int> x, int x_lang) const {
  Tape t;
  GaussianVal g = vnmt_prior(t, x, x_lang);
  return Gaussian{g.mean.v(), g.logvar.v()};
}

double GnmtModel::source_log_prob_plain(std::span<const int> tokens, int lang,
                                        const Tensor& z) const {
  Tape t;
  return source_log_prob(t, tokens, lang, t.leaf(z)).total.v().item();
}

GnmtModel::DecState GnmtModel::initial_state() const {
  return DecState{Tensor::zeros(1, cfg_.hidden_dim), Tensor::zeros(1, cfg_.hidden_dim)};
}

std::vector<GnmtModel::StepOut> GnmtModel::target_step_batch(
    const std::vector<std::pair<const DecState*, int>>& batch, int y_lang, const Tensor& z,
    const Tensor& enc_mat) const {
  Tape t;
  auto& ps = const_cast<ParameterStore&>(params_);
  Val w = t.param(ps, "tgt_dec.W");
  Val b = t.param(ps, "tgt_dec.b");
  Val table_T = t.transpose(t.param(ps, "emb.lang" + std::to_string(y_lang)));
  Val zv = t.leaf(z);
  Val enc = t.leaf(enc_mat);
  std::optional<Val> one_hot;
  if (cfg_.multilingual()) one_hot = lang_one_hot(t, y_lang);

  std::vector<StepOut> outs;
  outs.reserve(batch.size());
  for (const auto& [state, prev_tok] : batch) {
    Val h = t.leaf(state->h);
    Val c = t.leaf(state->c);
    auto [context, alpha] = attention(t, h, enc);
    std::vector<Val> ins{embed_tok(t, y_lang, prev_tok)};
    if (one_hot) ins.push_back(*one_hot);
    ins.push_back(zv);
    ins.push_back(context);
    auto s = lstm_step(t, w, b, cfg_.hidden_dim, h, c, ins);
    Val lp = token_log_dist(t, s.hidden, "tgt_dec.out", table_T);
    outs.push_back(StepOut{DecState{s.hidden.v(), s.cell.v()}, lp.v().data});
  }
  return outs;
}

std::vector<GnmtModel::StepOut> GnmtModel::source_step_batch(
    const std::vector<std::pair<const DecState*, int>>& batch, int lang, const Tensor& z) const {
  require_variant(cfg_.variant != Variant::Vnmt, "source_step_batch");
  Tape t;
  auto& ps = const_cast<ParameterStore&>(params_);
  Val w = t.param(ps, "src_dec.W");
  Val b = t.param(ps, "src_dec.b");
  Val table_T = t.transpose(t.param(ps, "emb.lang" + std::to_string(lang)));
  Val zv = t.leaf(z);
  std::optional<Val> one_hot;
  if (cfg_.multilingual()) one_hot = lang_one_hot(t, lang);

  std::vector<StepOut> outs;
  outs.reserve(batch.size());
  for (const auto& [state, prev_tok] : batch) {
    Val h = t.leaf(state->h);
    Val c = t.leaf(state->c);
    std::vector<Val> ins{embed_tok(t, lang, prev_tok)};
    if (one_hot) ins.push_back(*one_hot);
    ins.push_back(zv);
    auto s = lstm_step(t, w, b, cfg_.hidden_dim, h, c, ins);
    Val lp = token_log_dist(t, s.hidden, "src_dec.out", table_T);
    outs.push_back(StepOut{DecState{s.hidden.v(), s.cell.v()}, lp.v().data});
  }
  return outs;
}

}  // namespace gnmt
