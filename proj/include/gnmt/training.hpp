#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gnmt/corpus.hpp"
#include "gnmt/model.hpp"

#include "json.hpp"

namespace gnmt {

enum class Optimizer { Adam, Sgd };

struct TrainConfig {
  Optimizer optimizer = Optimizer::Adam;
  int64_t kl_anneal_iterations = 50000;
  double word_dropout_rate = 0.30;  // GNMT variants only; VNMT never drops
  int samples_per_datapoint = 1;
  int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double grad_clip_norm = 5.0;
  int64_t validation_interval = 1000;
  int patience = 10;
  uint64_t seed = 1;
  int mixed_ratio_paired = 1;
  int mixed_ratio_mono = 1;
  int64_t max_iterations = 200000;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Closed-form KL divergences between diagonal Gaussians. The graph forms
// participate in backprop; the plain forms serve reporting and decode.
Val kl_standard_normal(Tape& t, const GaussianVal& q);
Val kl_diag_gaussians(Tape& t, const GaussianVal& q, const GaussianVal& p);
double kl_standard_normal_value(const Gaussian& q);
double kl_diag_gaussians_value(const Gaussian& q, const Gaussian& p);

// min(1, iteration / horizon)
double anneal_weight(int64_t iteration, int64_t horizon);

// Replaces each eligible teacher-forced input token with UNK independently
// with probability `rate`. BOS/EOS/PAD and mask sentinels are never replaced.
std::vector<int> word_dropout(std::span<const int> teacher_inputs, double rate, Rng& rng);

struct ElboDiagnostics {
  double objective = 0;
  double recon_x = 0;  // 0 for VNMT (term absent)
  double recon_y = 0;
  double kl = 0;
};

struct ElboVal {
  Val objective;
  ElboDiagnostics diag;
};

// Single-example ELBO graph. Draws S reparameterized samples from q(z|x,y);
// for GNMT variants the reconstruction is log p(x|z) + log p(y|z,x) against
// the N(0,I) prior; for VNMT it is log p(y|z,x) against the learned prior
// p(z|x). Monolingual reconstruction passes y = x with equal language ids and
// requires the multilingual variant. Word dropout applies only when
// `train_mode` is set and the variant is not VNMT.
ElboVal elbo(Tape& t, const GnmtModel& model, const Sentence& x, const Sentence& y,
             bool monolingual, int samples, double anneal_w, Rng& rng, const TrainConfig& cfg,
             bool train_mode);

struct EarlyStopDecision {
  bool stop = false;
  size_t best_index = 0;
};
// Stops after `patience` consecutive evaluations without improvement over the
// best seen so far.
EarlyStopDecision early_stopping(const std::vector<double>& validation_history, int patience);

struct TrainState {
  int64_t iteration = 0;
  double best_validation = 0;
  bool has_best = false;
  Rng noise_rng;  // z samples + word dropout
};

struct StepMetrics {
  double objective = 0;
  double recon_x = 0;
  double recon_y = 0;
  double kl = 0;
  double anneal = 0;
  double grad_norm = 0;
};

// One optimizer step over a batch: accumulates the batch-mean negative ELBO,
// backpropagates, clips the global gradient norm, applies an Adam update.
StepMetrics train_step(GnmtModel& model, const Batch& batch, TrainState& state,
                       const TrainConfig& cfg);

// Mean validation ELBO at anneal weight 1, S=1, no word dropout. The noise
// stream is re-seeded identically on every call so successive validations are
// comparable.
double validation_elbo(const GnmtModel& model, const std::vector<ParallelExample>& valid,
                       uint64_t seed);

struct TrainResult {
  int64_t iterations = 0;
  double best_validation = 0;
  int64_t best_iteration = 0;
  bool early_stopped = false;
  std::string best_checkpoint;
  std::string final_checkpoint;
};

// Full training loop: epochs over a batch iterator, metrics CSV, periodic
// validation with early stopping, best + final checkpoints.
class Trainer {
 public:
  Trainer(GnmtModel& model, TrainConfig cfg, std::vector<ParallelExample> train,
          std::vector<MonolingualExample> mono_train, std::vector<ParallelExample> valid,
          std::string out_dir);

  TrainResult run();

 private:
  void write_checkpoint(const std::string& path, const TrainState& state) const;

  GnmtModel& model_;
  TrainConfig cfg_;
  std::vector<ParallelExample> train_;
  std::vector<MonolingualExample> mono_train_;
  std::vector<ParallelExample> valid_;
  std::string out_dir_;
};

}  // namespace gnmt
