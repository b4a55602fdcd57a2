#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gnmt/training.hpp"
#include "oracle_helpers.hpp"
#include "quadrature_oracle.hpp"

using namespace gnmt;

namespace {

ModelConfig small_config(Variant v = Variant::Gnmt, int64_t h = 4, int64_t e = 3, int64_t z = 2,
                         int64_t vocab = 11) {
  ModelConfig c;
  c.variant = v;
  c.hidden_dim = h;
  c.embed_dim = e;
  c.z_dim = z;
  c.vocab_sizes = {vocab, vocab};
  return c;
}

// Monte Carlo estimate of KL(q || p) for diagonal Gaussians.
double mc_kl(const Gaussian& q, const Gaussian* p, int n, Rng& rng) {
  const int64_t d = q.mean.cols();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    double lq = 0, lp = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double sigma = std::exp(0.5 * q.logvar.at(0, j));
      const double zj = q.mean.at(0, j) + sigma * rng.normal();
      const double dq = (zj - q.mean.at(0, j)) / sigma;
      lq += -0.5 * dq * dq - 0.5 * q.logvar.at(0, j) - 0.918938533204672741780329736406;
      if (p) {
        const double sp = std::exp(0.5 * p->logvar.at(0, j));
        const double dp = (zj - p->mean.at(0, j)) / sp;
        lp += -0.5 * dp * dp - 0.5 * p->logvar.at(0, j) - 0.918938533204672741780329736406;
      } else {
        lp += -0.5 * zj * zj - 0.918938533204672741780329736406;
      }
    }
    acc += lq - lp;
  }
  return acc / n;
}

Gaussian random_gaussian(int64_t d, Rng& rng) {
  Gaussian g;
  g.mean = Tensor::zeros(1, d);
  g.logvar = Tensor::zeros(1, d);
  for (auto& v : g.mean.data) v = rng.uniform(-1.5, 1.5);
  for (auto& v : g.logvar.data) v = rng.uniform(-1.0, 1.0);
  return g;
}

}  // namespace

TEST_CASE("kl against the standard normal: closed forms") {
  Gaussian q;
  q.mean = Tensor::row({0, 0, 0});
  q.logvar = Tensor::row({0, 0, 0});
  CHECK(kl_standard_normal_value(q) == 0.0);

  Gaussian one;
  one.mean = Tensor::row({1.0});
  one.logvar = Tensor::row({0.0});
  CHECK(kl_standard_normal_value(one) == doctest::Approx(0.5));
}

TEST_CASE("closed-form kl matches a Monte Carlo estimate within 1 percent") {
  Rng rng(2024);
  for (int rep = 0; rep < 5; ++rep) {
    Gaussian q = random_gaussian(3, rng);
    const double closed = kl_standard_normal_value(q);
    const double mc = mc_kl(q, nullptr, 1000000, rng);
    CHECK(std::fabs(mc - closed) / std::max(closed, 1e-8) < 0.01);

    Gaussian p = random_gaussian(3, rng);
    const double closed2 = kl_diag_gaussians_value(q, p);
    const double mc2 = mc_kl(q, &p, 1000000, rng);
    CHECK(std::fabs(mc2 - closed2) / std::max(closed2, 1e-8) < 0.01);
  }
}

TEST_CASE("kl graph forms agree with the closed-form values and stay nonnegative") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Gaussian q = random_gaussian(4, rng);
    Gaussian p = random_gaussian(4, rng);
    Tape t;
    GaussianVal qv{t.leaf(q.mean), t.leaf(q.logvar)};
    GaussianVal pv{t.leaf(p.mean), t.leaf(p.logvar)};
    const double a = kl_standard_normal(t, qv).v().item();
    const double b = kl_diag_gaussians(t, qv, pv).v().item();
    CHECK(a == doctest::Approx(kl_standard_normal_value(q)).epsilon(1e-12));
    CHECK(b == doctest::Approx(kl_diag_gaussians_value(q, p)).epsilon(1e-12));
    CHECK(a >= 0.0);
    CHECK(b >= 0.0);
  }
}

TEST_CASE("anneal weight ramps linearly and clamps at one") {
  CHECK(anneal_weight(0, 50000) == 0.0);
  CHECK(anneal_weight(25000, 50000) == doctest::Approx(0.5));
  CHECK(anneal_weight(50000, 50000) == 1.0);
  CHECK(anneal_weight(60000, 50000) == 1.0);
  CHECK(anneal_weight(1000, 2000) == doctest::Approx(0.5));
}

TEST_CASE("word dropout respects the rate and never touches specials") {
  Rng rng(5);
  std::vector<int> in{kBosId, 4, 5, 6, 7};
  CHECK(word_dropout(in, 0.0, rng) == in);

  auto all = word_dropout(in, 1.0, rng);
  CHECK(all[0] == kBosId);
  for (size_t i = 1; i < all.size(); ++i) CHECK(all[i] == kUnkId);

  // empirical rate over >= 1e5 eligible tokens
  int64_t replaced = 0, eligible = 0;
  std::vector<int> row{kBosId, 4, 5, 6, 7, 8, 9, 10, kPadId, kEosId};
  for (int rep = 0; rep < 20000; ++rep) {
    auto out = word_dropout(row, 0.30, rng);
    CHECK(out[0] == kBosId);
    CHECK(out[8] == kPadId);
    CHECK(out[9] == kEosId);
    for (size_t i = 1; i <= 7; ++i) {
      ++eligible;
      if (out[i] == kUnkId) ++replaced;
    }
  }
  const double rate = static_cast<double>(replaced) / static_cast<double>(eligible);
  CHECK(eligible >= 100000);
  CHECK(std::fabs(rate - 0.30) < 0.01);
}

TEST_CASE("elbo with anneal weight zero equals the reconstruction term") {
  GnmtModel m(small_config());
  Rng rng(3);
  m.init_params(rng);
  Sentence x{{4, 5, 6}, 0};
  Sentence y{{7, 8}, 1};
  TrainConfig cfg;
  Rng noise(11);
  Tape t;
  ElboVal e = elbo(t, m, x, y, false, 2, 0.0, noise, cfg, false);
  CHECK(e.diag.objective == doctest::Approx(e.diag.recon_x + e.diag.recon_y).epsilon(1e-12));
}

TEST_CASE("elbo is deterministic and repeatable under a fixed seed") {
  GnmtModel m(small_config());
  Rng rng(3);
  m.init_params(rng);
  Sentence x{{4, 5, 6}, 0};
  Sentence y{{7, 8}, 1};
  TrainConfig cfg;
  auto run = [&]() {
    Rng noise(123);
    Tape t;
    return elbo(t, m, x, y, false, 1, 0.7, noise, cfg, false).diag.objective;
  };
  CHECK(run() == run());
}

TEST_CASE("elbo matches an independent assembly of its three terms") {
  GnmtModel m(small_config(Variant::Gnmt, 4, 3, 2, 11));
  Rng rng(17);
  m.init_params(rng);
  Sentence x{{4, 9, 6}, 0};
  Sentence y{{5, 7}, 1};
  TrainConfig cfg;

  Rng noise(31);
  Tape t;
  ElboVal got = elbo(t, m, x, y, false, 1, 1.0, noise, cfg, /*train_mode=*/false);

  // Oracle: replay the same noise stream, then assemble the objective from
  // the individual operations on the same z sample.
  Rng replay(31);
  const Tensor eps = Tensor::row(replay.normal_vec(2));
  Gaussian q = m.posterior_plain(x.tokens, 0, y.tokens, 1);
  Tensor z = Tensor::zeros(1, 2);
  for (int64_t j = 0; j < 2; ++j)
    z.at(0, j) = q.mean.at(0, j) + std::exp(0.5 * q.logvar.at(0, j)) * eps.at(0, j);
  const double lx = m.source_log_prob_plain(x.tokens, 0, z);
  Tape t2;
  const double ly =
      m.target_log_prob(t2, y.tokens, 1, x.tokens, 0, t2.leaf(z)).total.v().item();
  const double kl = kl_standard_normal_value(q);
  CHECK(got.diag.objective == doctest::Approx(lx + ly - kl).epsilon(1e-10));
  CHECK(got.diag.recon_x == doctest::Approx(lx).epsilon(1e-10));
  CHECK(got.diag.recon_y == doctest::Approx(ly).epsilon(1e-10));
  CHECK(got.diag.kl == doctest::Approx(kl).epsilon(1e-10));
}

TEST_CASE("vnmt elbo assembles from target likelihood and prior kl") {
  GnmtModel m(small_config(Variant::Vnmt, 4, 3, 2, 11));
  Rng rng(19);
  m.init_params(rng);
  Sentence x{{4, 9, 6}, 0};
  Sentence y{{5, 7}, 1};
  TrainConfig cfg;

  Rng noise(37);
  Tape t;
  ElboVal got = elbo(t, m, x, y, false, 1, 1.0, noise, cfg, false);

  Rng replay(37);
  const Tensor eps = Tensor::row(replay.normal_vec(2));
  Gaussian q = m.posterior_plain(x.tokens, 0, y.tokens, 1);
  Gaussian p = m.vnmt_prior_plain(x.tokens, 0);
  Tensor z = Tensor::zeros(1, 2);
  for (int64_t j = 0; j < 2; ++j)
    z.at(0, j) = q.mean.at(0, j) + std::exp(0.5 * q.logvar.at(0, j)) * eps.at(0, j);
  Tape t2;
  EncStates enc = m.encode_source(t2, x.tokens, 0, std::nullopt);
  const double ly = m.target_log_prob(t2, y.tokens, 1, enc, t2.leaf(z)).total.v().item();
  const double kl = kl_diag_gaussians_value(q, p);
  CHECK(got.diag.objective == doctest::Approx(ly - kl).epsilon(1e-10));
  CHECK(got.diag.recon_x == 0.0);

  // the vnmt variant has no source decoder to touch
  CHECK_FALSE(m.params().has("src_dec.W"));
}

TEST_CASE("monolingual elbo requires the multilingual variant") {
  GnmtModel m(small_config());
  Rng noise(1);
  TrainConfig cfg;
  Tape t;
  Sentence s{{4, 5}, 0};
  CHECK_THROWS_AS(elbo(t, m, s, s, true, 1, 1.0, noise, cfg, false), ConfigError);
}

TEST_CASE("full elbo gradient matches finite differences at hidden 4") {
  GnmtModel m(small_config(Variant::Gnmt, 4, 4, 3, 11));
  Rng rng(61);
  m.init_params(rng);
  Sentence x{{4, 9, 6}, 0};
  Sentence y{{5, 7}, 1};
  TrainConfig cfg;
  auto build = [&](Tape& t) {
    Rng noise(77);  // frozen noise so the objective is FD-differentiable
    return elbo(t, m, x, y, false, 1, 0.8, noise, cfg, false).objective;
  };
  auto objective = [&]() {
    Tape t;
    return build(t).v().item();
  };
  Tape t;
  t.backward(build(t));
  auto rep = gnmt::testing::finite_difference_check(
      m.params(), objective,
      [&](const std::string& n) -> const Tensor& { return m.params().grad(n); });
  INFO("worst ", rep.worst_param, " analytic ", rep.worst_analytic, " numeric ",
       rep.worst_numeric);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("early stopping scans the history as specified") {
  CHECK_FALSE(early_stopping({1, 2, 3, 4, 5}, 3).stop);
  auto flat = early_stopping({2, 2, 2, 2}, 3);
  CHECK(flat.stop);
  CHECK(flat.best_index == 0);
  CHECK_FALSE(early_stopping({2, 2, 2}, 3).stop);

  // noisy history against a straightforward reference scan
  Rng rng(9);
  std::vector<double> h;
  for (int i = 0; i < 40; ++i) h.push_back(rng.uniform(-10, 10));
  for (int patience = 1; patience <= 6; ++patience) {
    double best = -1e300;
    int since = 0;
    size_t best_i = 0;
    for (size_t i = 0; i < h.size(); ++i) {
      if (h[i] > best) {
        best = h[i];
        best_i = i;
        since = 0;
      } else {
        ++since;
      }
    }
    auto d = early_stopping(h, patience);
    CHECK(d.stop == (since >= patience));
    CHECK(d.best_index == best_i);
  }
}

namespace {
Batch one_example_batch() {
  Batch b;
  b.monolingual = false;
  b.src = {{4, 5, 6}};
  b.tgt = {{7, 8}};
  b.src_len = {3};
  b.tgt_len = {2};
  b.src_lang = {0};
  b.tgt_lang = {1};
  return b;
}
}  // namespace

TEST_CASE("train step with zero learning rate leaves parameters unchanged") {
  GnmtModel m(small_config());
  Rng rng(3);
  m.init_params(rng);
  auto before = m.params().value("tgt_dec.W");
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  TrainState st;
  st.noise_rng = Rng(5);
  train_step(m, one_example_batch(), st, cfg);
  const auto& after = m.params().value("tgt_dec.W");
  for (size_t i = 0; i < before.data.size(); ++i) CHECK(before.data[i] == after.data[i]);
  CHECK(st.iteration == 1);
}

TEST_CASE("gradient clipping pins the global norm to the threshold") {
  GnmtModel m(small_config());
  Rng rng(3);
  m.init_params(rng);
  ParameterStore& ps = m.params();
  ps.zero_grads();
  Rng gr(13);
  for (const auto& name : ps.names())
    for (auto& v : ps.grad(name).data) v = gr.uniform(-1, 1);
  const double norm = ps.grad_global_norm();
  const double clip = norm / 3.0;
  ps.scale_grads(clip / norm);
  CHECK(std::fabs(ps.grad_global_norm() - clip) < 1e-9);
}

TEST_CASE("repeated steps on one example improve the objective") {
  GnmtModel m(small_config(Variant::Gnmt, 8, 4, 2, 11));
  Rng rng(21);
  m.init_params(rng);
  TrainConfig cfg;
  cfg.kl_anneal_iterations = 50;
  cfg.learning_rate = 3e-3;
  cfg.word_dropout_rate = 0.0;
  TrainState st;
  st.noise_rng = Rng(9);
  // The per-step training metric is noisy (fresh z sample each step); progress
  // is measured on a deterministic evaluation with frozen noise.
  auto measure = [&]() {
    Rng noise(4242);
    Tape t;
    Batch b = one_example_batch();
    Sentence x{b.src[0], 0}, y{b.tgt[0], 1};
    return elbo(t, m, x, y, false, 1, 1.0, noise, cfg, false).diag.objective;
  };
  std::vector<double> objectives;
  for (int i = 0; i < 200; ++i) {
    train_step(m, one_example_batch(), st, cfg);
    objectives.push_back(measure());
  }
  // after warmup, regressions are transient: <= 5% of steps
  int regressions = 0, counted = 0;
  for (size_t i = 51; i < objectives.size(); ++i) {
    ++counted;
    if (objectives[i] < objectives[i - 1]) ++regressions;
  }
  CHECK(objectives.back() > objectives.front());
  CHECK(regressions <= counted / 20);
}

TEST_CASE("identical seeds give identical parameter trajectories") {
  auto run = [&]() {
    GnmtModel m(small_config());
    Rng rng(33);
    m.init_params(rng);
    TrainConfig cfg;
    cfg.word_dropout_rate = 0.3;
    TrainState st;
    st.noise_rng = Rng(77);
    for (int i = 0; i < 5; ++i) train_step(m, one_example_batch(), st, cfg);
    return m.params().value("tgt_dec.W").data;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("evaluation path never applies word dropout") {
  GnmtModel m(small_config());
  Rng rng(3);
  m.init_params(rng);
  Sentence x{{4, 5, 6}, 0};
  Sentence y{{7, 8}, 1};
  TrainConfig cfg;
  cfg.word_dropout_rate = 0.999;
  auto eval_obj = [&]() {
    Rng noise(55);
    Tape t;
    return elbo(t, m, x, y, false, 1, 1.0, noise, cfg, /*train_mode=*/false).diag.objective;
  };
  TrainConfig no_drop = cfg;
  no_drop.word_dropout_rate = 0.0;
  auto train_obj = [&]() {
    Rng noise(55);
    Tape t;
    return elbo(t, m, x, y, false, 1, 1.0, noise, no_drop, /*train_mode=*/true).diag.objective;
  };
  CHECK(eval_obj() == train_obj());
}

TEST_CASE("elbo never exceeds the exact log-likelihood on a micro-model") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    GnmtModel m(small_config(Variant::Gnmt, 2, 2, 2, 7));  // 3 real tokens
    Rng rng(seed * 101);
    m.init_params(rng);
    for (const auto& name : m.params().names())
      if (name.back() != 'b')
        for (auto& v : m.params().value(name).data) v *= 4.0;  // richer setting

    Sentence x{{4, 6}, 0};
    Sentence y{{5}, 1};
    auto check = gnmt::testing::elbo_bound_check(m, x, y);
    INFO("seed ", seed, " elbo ", check.elbo, " log p ", check.log_joint);
    CHECK(check.elbo <= check.log_joint + 1e-6);
    CHECK(check.gap() > 1e-6);  // the gap is real, not quadrature noise
  }
}
