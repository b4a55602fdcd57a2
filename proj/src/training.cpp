#include "gnmt/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gnmt/errors.hpp"
#include "gnmt/format.hpp"

namespace gnmt {

namespace {
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
}  // namespace

void TrainConfig::validate() const {
  if (word_dropout_rate < 0 || word_dropout_rate > 1)
    throw ConfigError("word dropout rate must be in [0,1]");
  if (kl_anneal_iterations < 1) throw ConfigError("kl anneal horizon must be >= 1");
  if (validation_interval < 1) throw ConfigError("validation interval must be >= 1");
  if (samples_per_datapoint < 1) throw ConfigError("samples per datapoint must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (mixed_ratio_paired < 1 || mixed_ratio_mono < 1)
    throw ConfigError("mixed-batch ratio parts must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"},
          {"kl_anneal_iterations", kl_anneal_iterations},
          {"word_dropout_rate", word_dropout_rate},
          {"samples_per_datapoint", samples_per_datapoint},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"grad_clip_norm", grad_clip_norm},
          {"validation_interval", validation_interval},
          {"patience", patience},
          {"seed", seed},
          {"mixed_ratio_paired", mixed_ratio_paired},
          {"mixed_ratio_mono", mixed_ratio_mono},
          {"max_iterations", max_iterations}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed = {
      "optimizer",        "kl_anneal_iterations", "word_dropout_rate",
      "samples_per_datapoint", "batch_size",      "learning_rate",
      "grad_clip_norm",   "validation_interval",  "patience",
      "seed",             "mixed_ratio_paired",   "mixed_ratio_mono",
      "max_iterations"};
  if (!j.is_object()) throw ConfigError("config: train must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in train");
  TrainConfig c;
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam")
    c.optimizer = Optimizer::Adam;
  else if (opt == "sgd")
    c.optimizer = Optimizer::Sgd;
  else
    throw ConfigError("unknown optimizer: " + opt);
  c.kl_anneal_iterations = j.value("kl_anneal_iterations", c.kl_anneal_iterations);
  c.word_dropout_rate = j.value("word_dropout_rate", c.word_dropout_rate);
  c.samples_per_datapoint = j.value("samples_per_datapoint", c.samples_per_datapoint);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.validation_interval = j.value("validation_interval", c.validation_interval);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.mixed_ratio_paired = j.value("mixed_ratio_paired", c.mixed_ratio_paired);
  c.mixed_ratio_mono = j.value("mixed_ratio_mono", c.mixed_ratio_mono);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.validate();
  return c;
}

Val kl_standard_normal(Tape& t, const GaussianVal& q) {
  // 0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)
  Val var = t.exp(q.logvar);
  Val mu2 = t.mul(q.mean, q.mean);
  Val inner = t.sub(t.add(var, mu2), t.add(q.logvar, t.constant(1.0)));
  return t.scale(t.sum(inner, 1), 0.5);
}

Val kl_diag_gaussians(Tape& t, const GaussianVal& q, const GaussianVal& p) {
  // 0.5 * sum(log sp^2 - log sq^2 + (sq^2 + (mq - mp)^2) / sp^2 - 1)
  Val diff = t.sub(q.mean, p.mean);
  Val num = t.add(t.exp(q.logvar), t.mul(diff, diff));
  Val ratio = t.mul(num, t.exp(t.scale(p.logvar, -1.0)));
  Val inner = t.sub(t.add(t.sub(p.logvar, q.logvar), ratio), t.constant(1.0));
  return t.scale(t.sum(inner, 1), 0.5);
}

double kl_standard_normal_value(const Gaussian& q) {
  double acc = 0;
  for (int64_t j = 0; j < q.mean.cols(); ++j) {
    const double lv = q.logvar.at(0, j);
    const double mu = q.mean.at(0, j);
    acc += std::exp(lv) + mu * mu - 1.0 - lv;
  }
  return 0.5 * acc;
}

double kl_diag_gaussians_value(const Gaussian& q, const Gaussian& p) {
  double acc = 0;
  for (int64_t j = 0; j < q.mean.cols(); ++j) {
    const double lq = q.logvar.at(0, j), lp = p.logvar.at(0, j);
    const double d = q.mean.at(0, j) - p.mean.at(0, j);
    acc += lp - lq + (std::exp(lq) + d * d) / std::exp(lp) - 1.0;
  }
  return 0.5 * acc;
}

double anneal_weight(int64_t iteration, int64_t horizon) {
  if (iteration < 0) throw ConfigError("anneal_weight: negative iteration");
  return std::min(1.0, static_cast<double>(iteration) / static_cast<double>(horizon));
}

std::vector<int> word_dropout(std::span<const int> teacher_inputs, double rate, Rng& rng) {
  std::vector<int> out(teacher_inputs.begin(), teacher_inputs.end());
  for (int& tok : out) {
    if (tok == kBosId || tok == kEosId || tok == kPadId || tok == kMaskId) continue;
    if (rng.uniform() < rate) tok = kUnkId;
  }
  return out;
}

namespace {

// Teacher inputs [BOS, t0 .. t_{T-1}]: step t consumes in[t] and predicts
// tokens[t], with EOS as the final target.
std::vector<int> shifted_inputs(const std::vector<int>& tokens) {
  std::vector<int> in;
  in.reserve(tokens.size() + 1);
  in.push_back(kBosId);
  in.insert(in.end(), tokens.begin(), tokens.end());
  return in;
}

}  // namespace

ElboVal elbo(Tape& t, const GnmtModel& model, const Sentence& x, const Sentence& y,
             bool monolingual, int samples, double anneal_w, Rng& rng, const TrainConfig& cfg,
             bool train_mode) {
  const Variant variant = model.config().variant;
  if (monolingual && variant != Variant::GnmtMulti)
    throw ConfigError("monolingual reconstruction requires the multilingual variant");
  if (monolingual && x.language != y.language)
    throw ConfigError("monolingual example with mismatched languages");
  if (samples < 1) throw ConfigError("elbo: samples must be >= 1");

  GaussianVal q = model.infer_posterior(t, x.tokens, x.language, y.tokens, y.language);

  // Teacher inputs, with word dropout in GNMT training mode. One draw per
  // example, shared across the S samples.
  std::vector<int> x_in = shifted_inputs(x.tokens);
  std::vector<int> y_in = shifted_inputs(y.tokens);
  const bool drop = train_mode && variant != Variant::Vnmt && cfg.word_dropout_rate > 0;
  if (drop) {
    x_in = word_dropout(x_in, cfg.word_dropout_rate, rng);
    y_in = word_dropout(y_in, cfg.word_dropout_rate, rng);
  }

  Val kl;
  GaussianVal prior;
  if (variant == Variant::Vnmt) {
    prior = model.vnmt_prior(t, x.tokens, x.language);
    kl = kl_diag_gaussians(t, q, prior);
  } else {
    kl = kl_standard_normal(t, q);
  }

  std::optional<EncStates> vnmt_enc;
  if (variant == Variant::Vnmt)
    vnmt_enc = model.encode_source(t, x.tokens, x.language, std::nullopt);

  Val recon_x_sum, recon_y_sum;
  for (int s = 0; s < samples; ++s) {
    const Tensor eps = Tensor::row(rng.normal_vec(static_cast<size_t>(model.config().z_dim)));
    Val z = reparameterize(t, q.mean, q.logvar, eps);
    if (variant != Variant::Vnmt) {
      auto sx = model.source_log_prob(t, x.tokens, x.language, z, x_in);
      recon_x_sum = recon_x_sum ? t.add(recon_x_sum, sx.total) : sx.total;
      EncStates enc = model.encode_source(t, x.tokens, x.language, z);
      auto sy = model.target_log_prob(t, y.tokens, y.language, enc, z, y_in);
      recon_y_sum = recon_y_sum ? t.add(recon_y_sum, sy.total) : sy.total;
    } else {
      auto sy = model.target_log_prob(t, y.tokens, y.language, *vnmt_enc, z, y_in);
      recon_y_sum = recon_y_sum ? t.add(recon_y_sum, sy.total) : sy.total;
    }
  }
  const double inv_s = 1.0 / static_cast<double>(samples);
  Val recon = recon_x_sum ? t.add(t.scale(recon_x_sum, inv_s), t.scale(recon_y_sum, inv_s))
                          : t.scale(recon_y_sum, inv_s);
  Val objective = t.sub(recon, t.scale(kl, anneal_w));

  ElboVal out;
  out.objective = objective;
  out.diag.objective = objective.v().item();
  out.diag.recon_x = recon_x_sum ? recon_x_sum.v().item() * inv_s : 0.0;
  out.diag.recon_y = recon_y_sum.v().item() * inv_s;
  out.diag.kl = kl.v().item();
  return out;
}

EarlyStopDecision early_stopping(const std::vector<double>& validation_history, int patience) {
  EarlyStopDecision d;
  double best = -std::numeric_limits<double>::infinity();
  int since = 0;
  for (size_t i = 0; i < validation_history.size(); ++i) {
    if (validation_history[i] > best) {
      best = validation_history[i];
      d.best_index = i;
      since = 0;
    } else {
      ++since;
    }
  }
  d.stop = since >= patience;
  return d;
}

StepMetrics train_step(GnmtModel& model, const Batch& batch, TrainState& state,
                       const TrainConfig& cfg) {
  if (batch.size() == 0) throw DataError("train_step: empty batch");
  const double aw = anneal_weight(state.iteration, cfg.kl_anneal_iterations);

  Tape t;
  StepMetrics m;
  m.anneal = aw;
  Val obj_sum;
  for (size_t i = 0; i < batch.size(); ++i) {
    Sentence x{std::vector<int>(batch.src[i].begin(),
                                batch.src[i].begin() + batch.src_len[i]),
               batch.src_lang[i]};
    Sentence y{std::vector<int>(batch.tgt[i].begin(),
                                batch.tgt[i].begin() + batch.tgt_len[i]),
               batch.tgt_lang[i]};
    ElboVal e = elbo(t, model, x, y, batch.monolingual, cfg.samples_per_datapoint, aw,
                     state.noise_rng, cfg, /*train_mode=*/true);
    if (!std::isfinite(e.diag.recon_x))
      throw NumericError("non-finite reconstruction_x at iteration " +
                         std::to_string(state.iteration));
    if (!std::isfinite(e.diag.recon_y))
      throw NumericError("non-finite reconstruction_y at iteration " +
                         std::to_string(state.iteration));
    if (!std::isfinite(e.diag.kl))
      throw NumericError("non-finite kl at iteration " + std::to_string(state.iteration));
    m.objective += e.diag.objective;
    m.recon_x += e.diag.recon_x;
    m.recon_y += e.diag.recon_y;
    m.kl += e.diag.kl;
    obj_sum = obj_sum ? t.add(obj_sum, e.objective) : e.objective;
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  m.objective *= inv_b;
  m.recon_x *= inv_b;
  m.recon_y *= inv_b;
  m.kl *= inv_b;

  Val loss = t.scale(obj_sum, -inv_b);
  t.backward(loss);

  ParameterStore& ps = model.params();
  if (!ps.grads_finite())
    throw NumericError("non-finite gradient at iteration " + std::to_string(state.iteration));
  m.grad_norm = ps.grad_global_norm();
  if (cfg.grad_clip_norm > 0 && m.grad_norm > cfg.grad_clip_norm)
    ps.scale_grads(cfg.grad_clip_norm / m.grad_norm);

  if (cfg.optimizer == Optimizer::Adam) {
    // Adam, bias-corrected; iteration counts from 1 inside the update.
    const auto step_num = static_cast<double>(state.iteration + 1);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, step_num);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, step_num);
    for (const std::string& name : ps.names()) {
      Tensor& theta = ps.value(name);
      const Tensor& g = ps.grad(name);
      Tensor& mom = ps.aux("adam_m", name);
      Tensor& vel = ps.aux("adam_v", name);
      for (size_t i = 0; i < theta.data.size(); ++i) {
        mom.data[i] = kAdamBeta1 * mom.data[i] + (1.0 - kAdamBeta1) * g.data[i];
        vel.data[i] = kAdamBeta2 * vel.data[i] + (1.0 - kAdamBeta2) * g.data[i] * g.data[i];
        const double mhat = mom.data[i] / bc1;
        const double vhat = vel.data[i] / bc2;
        theta.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + kAdamEps);
      }
    }
  } else {
    for (const std::string& name : ps.names()) {
      Tensor& theta = ps.value(name);
      const Tensor& g = ps.grad(name);
      for (size_t i = 0; i < theta.data.size(); ++i)
        theta.data[i] -= cfg.learning_rate * g.data[i];
    }
  }
  state.iteration += 1;
  return m;
}

double validation_elbo(const GnmtModel& model, const std::vector<ParallelExample>& valid,
                       uint64_t seed) {
  if (valid.empty()) throw DataError("validation_elbo: empty validation set");
  TrainConfig eval_cfg;  // word dropout ignored in eval mode
  Rng noise(seed);
  double total = 0;
  for (const ParallelExample& ex : valid) {
    Tape t;
    ElboVal e = elbo(t, model, ex.source, ex.target, false, 1, 1.0, noise, eval_cfg,
                     /*train_mode=*/false);
    total += e.diag.objective;
  }
  return total / static_cast<double>(valid.size());
}

Trainer::Trainer(GnmtModel& model, TrainConfig cfg, std::vector<ParallelExample> train,
                 std::vector<MonolingualExample> mono_train, std::vector<ParallelExample> valid,
                 std::string out_dir)
    : model_(model),
      cfg_(std::move(cfg)),
      train_(std::move(train)),
      mono_train_(std::move(mono_train)),
      valid_(std::move(valid)),
      out_dir_(std::move(out_dir)) {
  cfg_.validate();
  std::filesystem::create_directories(out_dir_);
}

void Trainer::write_checkpoint(const std::string& path, const TrainState& state) const {
  TrainStateBlob blob;
  blob.iteration = static_cast<uint64_t>(state.iteration);
  blob.best_validation = state.best_validation;
  blob.has_best = state.has_best;
  blob.rng_state = state.noise_rng.state();
  model_.params().save_file(path, model_.config().to_json().dump(), &blob);
}

TrainResult Trainer::run() {
  Rng master(cfg_.seed);
  const BatchMode mode = mono_train_.empty() ? BatchMode::Paired : BatchMode::Mixed;
  BatchIterator batches(train_, mono_train_, mode, static_cast<size_t>(cfg_.batch_size),
                        master.split("batches"), cfg_.mixed_ratio_paired, cfg_.mixed_ratio_mono);
  TrainState state;
  state.noise_rng = master.split("noise");

  std::ofstream metrics(out_dir_ + "/metrics.csv", std::ios::binary);
  if (!metrics) throw DataError("cannot write metrics log in " + out_dir_);
  metrics << "iteration,objective,reconstruction_x,reconstruction_y,kl,anneal_weight,wall_ms\n";

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  std::vector<double> history;
  bool stop = false;
  while (!stop && state.iteration < cfg_.max_iterations) {
    auto batch = batches.next();
    if (!batch) {
      batches.start_epoch();
      continue;
    }
    StepMetrics m = train_step(model_, *batch, state, cfg_);
    const auto wall =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    metrics << state.iteration << ',' << format_double(m.objective) << ','
            << format_double(m.recon_x) << ',' << format_double(m.recon_y) << ','
            << format_double(m.kl) << ',' << format_double(m.anneal) << ',' << wall << '\n';

    if (state.iteration % cfg_.validation_interval == 0) {
      const double v = validation_elbo(model_, valid_, cfg_.seed ^ 0x5eedULL);
      history.push_back(v);
      auto decision = early_stopping(history, cfg_.patience);
      if (v > state.best_validation || !state.has_best) {
        state.best_validation = v;
        state.has_best = true;
        result.best_iteration = state.iteration;
        result.best_checkpoint = out_dir_ + "/checkpoint_best.bin";
        write_checkpoint(result.best_checkpoint, state);
      }
      if (decision.stop) {
        stop = true;
        result.early_stopped = true;
      }
    }
  }
  result.iterations = state.iteration;
  result.best_validation = state.best_validation;
  result.final_checkpoint = out_dir_ + "/checkpoint_final.bin";
  write_checkpoint(result.final_checkpoint, state);
  if (result.best_checkpoint.empty()) result.best_checkpoint = result.final_checkpoint;
  metrics.flush();
  return result;
}

}  // namespace gnmt
