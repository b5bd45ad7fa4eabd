#include "helpers.hpp"

#include "deeptruck/trainer.hpp"

using namespace deeptruck;
using dt_test::synthetic_episode;
using dt_test::tiny_model;

namespace {

/// Zero-weight model whose head emits acceleration `a` and fuel rate `f`.
DeepModelParams constant_model(double a, double f) {
  DeepModelParams p(IoSpec::identity(1, 0.1), ModelArch{3, {4}});
  auto b = view(p.theta(), p.layout()[DeepModelParams::dec_b_index(1)]);
  b(kOutA, 0) = a;
  b(kOutF, 0) = f;
  return p;
}

/// Episode the constant model reproduces exactly.
Episode consistent_episode(double a, double f, std::size_t n) {
  Episode ep;
  double v = 4.0;
  for (std::size_t k = 0; k < n; ++k) {
    ep.push(0.1 * static_cast<double>(k), 20.0, 0.0, 1.0, v, k == 0 ? 0.0 : a, f);
    v = v + a * 0.1;
  }
  return ep;
}

/// Teacher-forced loss with every matrix product written as scalar loops.
double loop_oracle_loss(const DeepModelParams& p, const std::vector<Slice>& batch, std::size_t K) {
  const IoSpec& io = p.io();
  const Index h = p.hidden(), n_in = io.input_dim();
  const auto W = p.lstm_W();
  const auto b = p.lstm_b();
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double loss = 0.0;
  for (const Slice& s : batch) {
    const Episode& ep = *s.episode;
    std::vector<double> c(h, 0.0), hid(h, 0.0);
    for (std::size_t j = 0; j < K; ++j) {
      const std::size_t k = s.k0 + j;
      std::vector<double> raw{ep.engine_cmd[k], ep.brake_cmd[k]};
      if (io.w_dim == 1) raw.push_back(ep.grade[k]);
      raw.insert(raw.end(), {ep.a[k], ep.v[k], ep.f_rate[k]});
      std::vector<double> x(n_in);
      for (Index i = 0; i < n_in; ++i) x[i] = (raw[i] - io.input_offset[i]) / io.input_scale[i];
      std::vector<double> z(4 * h);
      for (Index r = 0; r < 4 * h; ++r) {
        z[r] = b(r, 0);
        for (Index i = 0; i < n_in; ++i) z[r] += W(r, i) * x[i];
        for (Index i = 0; i < h; ++i) z[r] += W(r, n_in + i) * hid[i];
      }
      for (Index i = 0; i < h; ++i) {
        c[i] = sig(z[h + i]) * c[i] + sig(z[i]) * std::tanh(z[3 * h + i]);
        hid[i] = sig(z[2 * h + i]) * std::tanh(c[i]);
      }
      std::vector<double> act = hid;
      for (std::size_t l = 0; l < p.decoder_layers(); ++l) {
        const auto Wl = p.dec_W(l);
        const auto bl = p.dec_b(l);
        std::vector<double> next(Wl.rows());
        for (Index r = 0; r < Wl.rows(); ++r) {
          next[r] = bl(r, 0);
          for (Index i = 0; i < Wl.cols(); ++i) next[r] += Wl(r, i) * act[i];
          if (l + 1 < p.decoder_layers()) next[r] = std::tanh(next[r]);
        }
        act = next;
      }
      const double a = act[0] * io.output_scale[0] + io.output_offset[0];
      const double v = ep.v[k] + a * io.dt;
      const double f = std::max(act[2] * io.output_scale[2] + io.output_offset[2], 0.0);
      loss += (a - ep.a[k + 1]) * (a - ep.a[k + 1]) + (v - ep.v[k + 1]) * (v - ep.v[k + 1]) +
              (f - ep.f_rate[k + 1]) * (f - ep.f_rate[k + 1]);
    }
  }
  return loss;
}

DeepModelParams normalized_tiny_model(const std::vector<Episode>& eps, Index h, std::uint64_t seed) {
  DeepModelParams p(fit_io_spec(eps, true), ModelArch{h, {5, 4}});
  Rng rng(seed);
  p.initialize(rng);
  return p;
}

/// Plant with one gear, negligible drag and instantaneous actuators.
PlantConfig linear_plant() {
  PlantConfig c;
  c.gear_ratios = {3.0};
  c.shift_up_speed.clear();
  c.shift_down_speed.clear();
  c.drag_coefficient = 1e-12;
  c.engine_lag_time_constant = 1e-6;
  c.brake_lag_time_constant = 1e-6;
  return c;
}

}  // namespace

TEST(Trainer, ExactPredictionsGiveZeroLoss) {
  const DeepModelParams p = constant_model(0.3, 2.0);
  const Episode ep = consistent_episode(0.3, 2.0, 40);
  const std::vector<Slice> batch{{&ep, 1}, {&ep, 10}};
  EXPECT_EQ(loss_kstep(p, batch, 20), 0.0);
  EXPECT_EQ(backprop_kstep(p, batch, 20), VectorXd::Zero(p.size()));
}

TEST(Trainer, ConstraintCoupledSingleStepLoss) {
  const DeepModelParams p = constant_model(1.0, 1.0);
  Episode ep;
  ep.push(0.0, 0.0, 0.0, 0.0, 10.0, 0.0, 1.0);
  ep.push(0.1, 0.0, 0.0, 0.0, 10.0, 0.0, 1.0);
  EXPECT_NEAR(loss_kstep(p, {{&ep, 0}}, 1), 1.01, 1e-12);
}

TEST(Trainer, LossMatchesScalarLoopOracle) {
  std::vector<Episode> eps{synthetic_episode(120, 1), synthetic_episode(90, 2)};
  const DeepModelParams p = normalized_tiny_model(eps, 5, 3);
  const std::vector<Slice> batch{{&eps[0], 0}, {&eps[0], 50}, {&eps[1], 17}};
  const double oracle = loop_oracle_loss(p, batch, 30);
  EXPECT_NEAR(loss_kstep(p, batch, 30), oracle, 1e-10 * oracle);
}

TEST(Trainer, GradientMatchesCentralDifferences) {
  std::vector<Episode> eps{synthetic_episode(80, 4), synthetic_episode(80, 5)};
  DeepModelParams p = normalized_tiny_model(eps, 4, 6);
  const std::vector<Slice> batch{{&eps[0], 3}, {&eps[1], 40}};
  const std::size_t K = 8;
  const VectorXd g = backprop_kstep(p, batch, K);
  const double step = 1e-5;
  double worst = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    DeepModelParams q = p;
    q.theta()(i) += step;
    const double up = loss_kstep(q, batch, K);
    q.theta()(i) -= 2 * step;
    const double down = loss_kstep(q, batch, K);
    const double fd = (up - down) / (2 * step);
    const double rel = std::abs(fd - g(i)) / std::max({std::abs(fd), std::abs(g(i)), 1e-6});
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Trainer, UnconstrainedSpeedHeadGetsNoGradient) {
  std::vector<Episode> eps{synthetic_episode(60, 7)};
  const DeepModelParams p = normalized_tiny_model(eps, 4, 8);
  const VectorXd g = backprop_kstep(p, {{&eps[0], 5}}, 10);
  const std::size_t last = p.decoder_layers() - 1;
  const auto gW = view(g, p.layout()[DeepModelParams::dec_W_index(last)]);
  const auto gb = view(g, p.layout()[DeepModelParams::dec_b_index(last)]);
  EXPECT_EQ(gW.row(kOutV).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(gb(kOutV, 0), 0.0);
  EXPECT_GT(gW.row(kOutA).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Trainer, LossIsNonnegativeAndRejectsEmptyBatch) {
  std::vector<Episode> eps{synthetic_episode(60, 9)};
  const DeepModelParams p = normalized_tiny_model(eps, 4, 10);
  EXPECT_GT(loss_kstep(p, {{&eps[0], 0}}, 20), 0.0);
  EXPECT_THROW(loss_kstep(p, {}, 20), Error);
  EXPECT_THROW(loss_kstep(p, {{&eps[0], 50}}, 20), Error);
}

TEST(Adagrad, ZeroGradientChangesNothing) {
  VectorXd x = VectorXd::Constant(3, 2.0);
  AdagradState s(3);
  adagrad_update(x, VectorXd::Zero(3), s, AdagradConfig{0.1, 1e-8, std::nullopt});
  EXPECT_EQ(x, VectorXd::Constant(3, 2.0));
  EXPECT_EQ(s.accum, VectorXd::Zero(3));
}

TEST(Adagrad, HandIteratedScalarSteps) {
  VectorXd x = VectorXd::Zero(1);
  AdagradState s(1);
  const AdagradConfig cfg{0.1, 1e-8, std::nullopt};
  adagrad_update(x, VectorXd::Ones(1), s, cfg);
  EXPECT_NEAR(x(0), -0.1, 1e-8);
  const double before = x(0);
  adagrad_update(x, VectorXd::Ones(1), s, cfg);
  EXPECT_NEAR(x(0) - before, -0.0707106781, 1e-8);
}

TEST(Adagrad, StepsShrinkAndAccumulatorsGrow) {
  VectorXd x = VectorXd::Zero(2);
  AdagradState s(2);
  const AdagradConfig cfg{0.5, 1e-8, std::nullopt};
  VectorXd g(2);
  g << 0.7, -3.0;
  double last_step = std::numeric_limits<double>::infinity();
  VectorXd last_acc = s.accum;
  for (int i = 0; i < 50; ++i) {
    const VectorXd before = x;
    adagrad_update(x, g, s, cfg);
    const double step = (x - before).norm();
    EXPECT_LE(step, last_step);
    EXPECT_TRUE((s.accum.array() >= last_acc.array()).all());
    last_step = step;
    last_acc = s.accum;
  }
}

TEST(Adagrad, ClipsAndRejectsNonFinite) {
  VectorXd x = VectorXd::Zero(2);
  AdagradState s(2);
  VectorXd g(2);
  g << 30.0, 40.0;
  EXPECT_DOUBLE_EQ(adagrad_update(x, g, s, AdagradConfig{0.1, 0.0, 5.0}), 50.0);
  EXPECT_NEAR(s.accum(0), 9.0, 1e-12);
  EXPECT_NEAR(s.accum(1), 16.0, 1e-12);
  g(0) = std::nan("");
  const VectorXd keep = x;
  EXPECT_THROW(adagrad_update(x, g, s, AdagradConfig{}), Error);
  EXPECT_EQ(x, keep);
}

namespace {

TrainConfig small_train_config() {
  TrainConfig c;
  c.K = 16;
  c.M = 4;
  c.N = 3;
  c.epochs = 4;
  c.validation_slices = 4;
  c.validation_rollouts = 3;
  c.deploy_horizon = 40;
  c.arch = ModelArch{6, {6}};
  return c;
}

}  // namespace

TEST(Train, ZeroLearningRateFreezesEverything) {
  std::vector<Episode> eps;
  for (int i = 0; i < 5; ++i) eps.push_back(synthetic_episode(120, 40 + i));
  TrainConfig cfg = small_train_config();
  cfg.learning_rate = 0.0;
  DeepModelParams p(fit_io_spec(eps, true), cfg.arch);
  Rng rng(12);
  p.initialize(rng);
  const TrainResult r = train(p, eps, cfg);
  EXPECT_EQ(r.final.theta(), p.theta());
  for (const auto& pt : r.curve) {
    EXPECT_EQ(pt.train_form_loss, r.curve[0].train_form_loss);
    EXPECT_EQ(pt.deploy_form_loss, r.curve[0].deploy_form_loss);
  }
}

TEST(Train, EqualSeedsGiveIdenticalCurves) {
  std::vector<Episode> eps;
  for (int i = 0; i < 5; ++i) eps.push_back(synthetic_episode(120, 50 + i));
  const TrainConfig cfg = small_train_config();
  DeepModelParams p(fit_io_spec(eps, true), cfg.arch);
  Rng rng(13);
  p.initialize(rng);
  const TrainResult a = train(p, eps, cfg);
  const TrainResult b = train(p, eps, cfg);
  ASSERT_EQ(a.curve.size(), cfg.epochs + 1);
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].train_form_loss, b.curve[i].train_form_loss);
    EXPECT_EQ(a.curve[i].deploy_form_loss, b.curve[i].deploy_form_loss);
  }
  EXPECT_EQ(a.final.theta(), b.final.theta());
}

TEST(Train, LearnsLinearPlant) {
  const PlantConfig plant = linear_plant();
  CycleGenConfig cyc;
  cyc.seed = 5;
  cyc.spanning_duration = 120.0;
  cyc.coasting_max_duration = 60.0;
  cyc.braking_max_duration = 120.0;
  const auto data = generate_dataset(cyc, plant, SpeedTracker{}, 0.5);
  TrainConfig cfg;
  cfg.K = 32;
  cfg.M = 16;
  cfg.N = 10;
  cfg.epochs = 200;
  cfg.deploy_horizon = 100;
  cfg.validation_rollouts = 16;
  cfg.arch = ModelArch{32, {32}};
  DeepModelParams init(fit_io_spec(data, true), cfg.arch);
  Rng rng(14);
  init.initialize(rng);
  const TrainResult r = train(init, data, cfg);

  CycleGenConfig held = cyc;
  held.seed = 99;
  const auto test = generate_dataset(held, plant, SpeedTracker{}, 0.1);
  std::vector<const Episode*> ptrs;
  for (const auto& e : test) ptrs.push_back(&e);
  const auto windows = fixed_windows(ptrs, 100, 30, 7);
  double worst_mean = 0.0;
  std::vector<double> err(101, 0.0);
  for (const auto& w : windows) {
    const auto [u, g] = episode_inputs(*w.episode, w.k0, 100, 1);
    const MatrixXd y = forward_deployment(r.best, u, g, episode_y(*w.episode, w.k0), 100);
    for (std::size_t j = 0; j <= 100; ++j) err[j] += std::abs(y(kOutV, static_cast<Index>(j)) - w.episode->v[w.k0 + j]);
  }
  for (double e : err) worst_mean = std::max(worst_mean, e / static_cast<double>(windows.size()));
  EXPECT_LT(worst_mean, 0.1);
}

TEST(Train, SlicesStayInsideEpisodes) {
  std::vector<Episode> eps{synthetic_episode(30, 60), synthetic_episode(5, 61), synthetic_episode(50, 62)};
  std::vector<const Episode*> ptrs{&eps[0], &eps[1], &eps[2]};
  const SliceSampler s(ptrs, 20);
  EXPECT_EQ(s.total(), (30u - 20u) + (50u - 20u));
  Rng rng(63);
  for (int i = 0; i < 2000; ++i) {
    const Slice sl = s.sample(rng);
    ASSERT_LE(sl.k0 + 20 + 1, sl.episode->size());
  }
}

TEST(Train, ConfigRoundTripsThroughText) {
  TrainConfig c;
  c.epochs = 17;
  c.gradient_clip_norm.reset();
  c.arch = ModelArch{12, {9, 3}};
  const TrainConfig d = TrainConfig::from_config(Config::from_string(c.to_text()));
  EXPECT_EQ(d.to_text(), c.to_text());
}
