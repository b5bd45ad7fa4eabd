#pragma once

// REINFORCE with discounted reward-to-go and a time-indexed average-return
// baseline, optimized with Adagrad.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/cacc_env.hpp"
#include "deeptruck/config.hpp"
#include "deeptruck/optim.hpp"
#include "deeptruck/parallel.hpp"
#include "deeptruck/policy.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

enum class Baseline { None, Time };

inline std::string to_string(Baseline b) { return b == Baseline::None ? "none" : "time"; }

inline Baseline parse_baseline(const std::string& s) {
  if (s == "none") return Baseline::None;
  if (s == "time") return Baseline::Time;
  throw Error(ErrorKind::InvalidInput, "baseline must be 'none' or 'time', got '" + s + "'");
}

struct PgConfig {
  long batch_size = 4000;  // timesteps per iteration
  long iterations = 200;
  double gamma = 0.9999;
  double learning_rate = 0.1;
  double epsilon = 1e-8;
  std::optional<double> clip_norm;
  Baseline baseline = Baseline::Time;
  bool normalize_advantages = false;
  bool common_start = true;   // every episode of an iteration starts from the same reset draw
  bool antithetic = false;    // episodes come in pairs whose exploration noise is mirrored
  double init_log_std = 0.5;
  double head_gain = 0.01;
  double engine_offset = 10.0;
  double engine_scale = 50.0;
  double brake_offset = 0.0;
  double brake_scale = 50.0;
  double gap_scale = 0.0;  // m; 0 derives it from the initialization ranges
  PolicyArch arch;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  static PgConfig desk() { return PgConfig{}; }

  static PgConfig paper() {
    PgConfig c;
    c.batch_size = 20000;
    c.iterations = 500;
    return c;
  }

  void validate(long horizon) const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw Error(ErrorKind::InvalidInput, "pg: " + what);
    };
    check(iterations > 0, "iterations must be positive");
    check(batch_size >= horizon, "batch_size must be at least the horizon");
    check(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    check(learning_rate > 0.0 && epsilon > 0.0, "learning_rate and epsilon must be positive");
    check(!clip_norm || *clip_norm > 0.0, "clip_norm must be positive");
    check(engine_scale > 0.0 && brake_scale > 0.0, "action scales must be positive");
    check(init_log_std >= kLogStdMin && init_log_std <= kLogStdMax, "init_log_std outside [-20, 2]");
    check(!arch.hidden.empty(), "policy needs at least one hidden layer");
  }

  AdagradConfig optimizer() const { return AdagradConfig{learning_rate, epsilon, clip_norm}; }

  /// Reads keys on top of the profile named by `profile` (desk or paper).
  static PgConfig from_config(const Config& c) {
    const std::string profile = c.get_string("profile", "desk");
    PgConfig p;
    if (profile == "paper") p = paper();
    else if (profile != "desk") throw Error(ErrorKind::InvalidInput, "pg: profile must be 'desk' or 'paper'");
    p.batch_size = c.get_int("batch_size", p.batch_size);
    p.iterations = c.get_int("iterations", p.iterations);
    p.gamma = c.get_double("gamma", p.gamma);
    p.learning_rate = c.get_double("learning_rate", p.learning_rate);
    p.epsilon = c.get_double("epsilon", p.epsilon);
    const std::string clip = c.get_string("clip_norm", p.clip_norm ? format_double(*p.clip_norm) : "none");
    p.clip_norm = clip == "none" ? std::nullopt : std::optional<double>(parse_double(clip, "clip_norm"));
    p.baseline = parse_baseline(c.get_string("baseline", to_string(p.baseline)));
    p.normalize_advantages = c.get_bool("normalize_advantages", p.normalize_advantages);
    p.common_start = c.get_bool("common_start", p.common_start);
    p.antithetic = c.get_bool("antithetic", p.antithetic);
    p.init_log_std = c.get_double("init_log_std", p.init_log_std);
    p.head_gain = c.get_double("head_gain", p.head_gain);
    p.engine_offset = c.get_double("engine_offset", p.engine_offset);
    p.engine_scale = c.get_double("engine_scale", p.engine_scale);
    p.brake_offset = c.get_double("brake_offset", p.brake_offset);
    p.brake_scale = c.get_double("brake_scale", p.brake_scale);
    p.gap_scale = c.get_double("gap_scale", p.gap_scale);
    if (c.has("hidden")) {
      p.arch.hidden.clear();
      for (const auto& h : split(c.get_string("hidden", ""), ',')) p.arch.hidden.push_back(parse_int(h, "hidden"));
    }
    p.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(p.seed)));
    return p;
  }

  std::string to_text() const {
    std::ostringstream o;
    std::string hidden;
    for (std::size_t i = 0; i < arch.hidden.size(); ++i) hidden += (i ? ", " : "") + std::to_string(arch.hidden[i]);
    o << "batch_size = " << batch_size << "\n"
      << "iterations = " << iterations << "\n"
      << "gamma = " << format_double(gamma) << "\n"
      << "learning_rate = " << format_double(learning_rate) << "\n"
      << "epsilon = " << format_double(epsilon) << "\n"
      << "clip_norm = " << (clip_norm ? format_double(*clip_norm) : "none") << "\n"
      << "baseline = " << to_string(baseline) << "\n"
      << "normalize_advantages = " << (normalize_advantages ? "true" : "false") << "\n"
      << "common_start = " << (common_start ? "true" : "false") << "\n"
      << "antithetic = " << (antithetic ? "true" : "false") << "\n"
      << "init_log_std = " << format_double(init_log_std) << "\n"
      << "head_gain = " << format_double(head_gain) << "\n"
      << "engine_offset = " << format_double(engine_offset) << "\n"
      << "engine_scale = " << format_double(engine_scale) << "\n"
      << "brake_offset = " << format_double(brake_offset) << "\n"
      << "brake_scale = " << format_double(brake_scale) << "\n"
      << "gap_scale = " << format_double(gap_scale) << "\n"
      << "hidden = " << hidden << "\n"
      << "seed = " << seed << "\n";
    return o.str();
  }
};

/// Fresh policy for an environment, initialized from the config's seed.
inline PolicyParams make_policy(const CaccConfig& env, const PgConfig& cfg) {
  PolicyParams p(env.obs_dim(), cfg.arch,
                 scaling_for(env, cfg.engine_offset, cfg.engine_scale, cfg.brake_offset, cfg.brake_scale, cfg.gap_scale));
  Rng rng = stream_rng(cfg.seed, 0, 0x706f6c696379ULL);
  p.initialize(rng, cfg.init_log_std, cfg.head_gain);
  return p;
}

/// G_t = sum over t' >= t of gamma^(t'-t) r_t'.
inline std::vector<double> reward_to_go(const std::vector<double>& r, double gamma) {
  std::vector<double> g(r.size());
  double acc = 0.0;
  for (std::size_t t = r.size(); t-- > 0;) g[t] = acc = r[t] + gamma * acc;
  return g;
}

inline std::vector<double> rewards_of(const Trajectory& tr) {
  std::vector<double> r;
  r.reserve(tr.size());
  for (const auto& s : tr.steps) r.push_back(s.reward);
  return r;
}

/// Per-trajectory advantages G_t - b_t, where b_t averages G_t over the
/// trajectories still running at t.
inline std::vector<std::vector<double>> advantages(const std::vector<Trajectory>& batch, double gamma,
                                                   Baseline baseline) {
  std::vector<std::vector<double>> adv;
  std::size_t longest = 0;
  for (const auto& tr : batch) {
    adv.push_back(reward_to_go(rewards_of(tr), gamma));
    longest = std::max(longest, tr.size());
  }
  if (baseline == Baseline::None) return adv;
  std::vector<double> sum(longest, 0.0);
  std::vector<double> count(longest, 0.0);
  for (const auto& g : adv)
    for (std::size_t t = 0; t < g.size(); ++t) {
      sum[t] += g[t];
      count[t] += 1.0;
    }
  for (auto& g : adv)
    for (std::size_t t = 0; t < g.size(); ++t) g[t] -= sum[t] / count[t];
  return adv;
}

/// Estimated gradient of expected return: the mean over all steps of
/// grad log pi(a|o) * advantage.
inline VectorXd policy_gradient(const PolicyParams& p, const std::vector<Trajectory>& batch, const PgConfig& cfg) {
  auto adv = advantages(batch, cfg.gamma, cfg.baseline);
  Index steps = 0;
  for (const auto& tr : batch) steps += static_cast<Index>(tr.size());
  if (steps == 0) throw Error(ErrorKind::InvalidInput, "policy_gradient: empty batch");
  MatrixXd obs(p.obs_dim(), steps);
  MatrixXd act(kActionDim, steps);
  VectorXd w(steps);
  Index c = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t t = 0; t < batch[i].size(); ++t, ++c) {
      const Transition& s = batch[i].steps[t];
      obs.col(c) = s.obs;
      act(0, c) = s.raw_action.engine;
      act(1, c) = s.raw_action.brake;
      w(c) = adv[i][t];
    }
  if (cfg.normalize_advantages && steps > 1) {
    const double mean = w.mean();
    const double sd = std::sqrt((w.array() - mean).square().sum() / static_cast<double>(steps));
    w = (w.array() - mean) / (sd + 1e-8);
  }
  return log_prob_gradient(p, obs, act, w / static_cast<double>(steps));
}

struct PgDiagnostics {
  long iteration = 0;
  double avg_discounted_return = 0.0;
  double avg_return = 0.0;
  long crashes = 0;
  long episodes = 0;
  long timesteps = 0;
  double grad_norm = 0.0;
  bool skipped = false;
  VectorXd std;
};

/// Gradient-ascent step on `p`; a non-finite gradient leaves `p` untouched and
/// marks the diagnostics as skipped.
inline PgDiagnostics pg_update(PolicyParams& p, const std::vector<Trajectory>& batch, AdagradState& opt,
                               const PgConfig& cfg) {
  PgDiagnostics d;
  for (const auto& tr : batch) {
    d.avg_discounted_return += discounted_sum(rewards_of(tr), cfg.gamma);
    d.avg_return += tr.undiscounted_return;
    d.crashes += tr.crashed ? 1 : 0;
    d.timesteps += static_cast<long>(tr.size());
  }
  d.episodes = static_cast<long>(batch.size());
  if (d.episodes > 0) {
    d.avg_discounted_return /= static_cast<double>(d.episodes);
    d.avg_return /= static_cast<double>(d.episodes);
  }
  const VectorXd g = policy_gradient(p, batch, cfg);
  d.grad_norm = g.norm();
  if (!g.allFinite()) {
    d.skipped = true;
  } else {
    adagrad_update(p.theta(), -g, opt, cfg.optimizer());
    p.clamp_log_std();
  }
  d.std = p.log_std().array().exp().matrix();
  return d;
}

/// Sampling policy whose standard-normal draws are multiplied by `sign`.
inline PolicyFn mirrored_policy_fn(const PolicyParams& p, double sign) {
  return [&p, sign](const VectorXd& obs, Rng& rng) {
    const PolicyOutput out = policy_forward(obs, p);
    VectorXd a(kActionDim);
    for (Index i = 0; i < kActionDim; ++i) a(i) = out.mean(i) + sign * out.std(i) * normal(rng, 0.0, 1.0);
    return Action{a(0), a(1)};
  };
}

/// Stochastic rollouts until at least `batch_size` timesteps are collected.
/// Episode j of iteration `it` draws from its own stream (shared by a
/// mirrored pair), and episodes are kept in index order, so the batch does not
/// depend on the thread count.
inline std::vector<Trajectory> collect_batch(const CaccEnv& env, const PolicyParams& p, const PgConfig& cfg,
                                             long it) {
  std::vector<Trajectory> batch;
  long steps = 0;
  const PolicyFn plus = mirrored_policy_fn(p, 1.0);
  const PolicyFn minus = mirrored_policy_fn(p, -1.0);
  const std::size_t wave = std::max<std::size_t>(cfg.antithetic ? 2 : 1, cfg.threads + (cfg.antithetic && cfg.threads % 2));
  std::size_t next = 0;
  std::optional<CaccState> start;
  if (cfg.common_start) {
    Rng rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(it), 0x7374617274ULL);
    start = env.reset(rng);
  }
  while (steps < cfg.batch_size) {
    std::vector<Trajectory> trs(wave);
    parallel_for(wave, cfg.threads, [&](std::size_t i) {
      const std::size_t j = next + i;
      const std::size_t stream = cfg.antithetic ? j / 2 : j;
      const bool mirrored = cfg.antithetic && j % 2 == 1;
      Rng rng = stream_rng(cfg.seed, (static_cast<std::uint64_t>(it) << 20) + stream, 0x726f6c6c6f7574ULL);
      const PolicyFn& pi = mirrored ? minus : plus;
      trs[i] = start ? rollout_from(env, *start, pi, rng, env.config().horizon)
                     : rollout(env, pi, rng, env.config().horizon);
    });
    for (auto& tr : trs) {
      if (steps >= cfg.batch_size && !(cfg.antithetic && batch.size() % 2 == 1)) break;
      steps += static_cast<long>(tr.size());
      batch.push_back(std::move(tr));
    }
    next += wave;
  }
  return batch;
}

struct PgResult {
  PolicyParams best;
  PolicyParams final;
  std::vector<PgDiagnostics> curve;
  long best_iteration = 0;
};

using IterationCallback = std::function<void(const PgDiagnostics&)>;

/// Trains a policy from `init`. The curve has one row per iteration,
/// measured on the batch collected with the parameters before the update.
/// The best checkpoint is the parameters that produced the highest average
/// discounted return.
inline PgResult train_policy(const CaccEnv& env, const PolicyParams& init, const PgConfig& cfg,
                             const IterationCallback& on_iteration = {}) {
  cfg.validate(env.config().horizon);
  if (init.obs_dim() != env.obs_dim())
    throw Error(ErrorKind::Shape, "policy observation size does not match the environment");
  PgResult res;
  PolicyParams p = init;
  AdagradState opt(p.layout().size());
  double best = -std::numeric_limits<double>::infinity();
  for (long it = 1; it <= cfg.iterations; ++it) {
    const auto batch = collect_batch(env, p, cfg, it);
    const PolicyParams before = p;
    PgDiagnostics d = pg_update(p, batch, opt, cfg);
    d.iteration = it;
    if (d.avg_discounted_return > best) {
      best = d.avg_discounted_return;
      res.best = before;
      res.best_iteration = it;
    }
    res.curve.push_back(d);
    if (on_iteration) on_iteration(d);
  }
  res.final = p;
  return res;
}

inline std::string policy_curve_header() {
  return "iteration,avg_discounted_return,avg_return,crashes,episodes,timesteps,grad_norm,skipped,std_E,std_B";
}

inline std::string policy_curve_row(const PgDiagnostics& d) {
  std::ostringstream o;
  o << d.iteration << ',' << format_double(d.avg_discounted_return) << ',' << format_double(d.avg_return) << ','
    << d.crashes << ',' << d.episodes << ',' << d.timesteps << ',' << format_double(d.grad_norm) << ','
    << (d.skipped ? 1 : 0) << ',' << format_double(d.std.size() ? d.std(0) : 0.0) << ','
    << format_double(d.std.size() > 1 ? d.std(1) : 0.0);
  return o.str();
}

inline void write_policy_curve(const std::filesystem::path& path, const std::vector<PgDiagnostics>& curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << policy_curve_header() << "\n";
  for (const auto& d : curve) out << policy_curve_row(d) << "\n";
}

}  // namespace deeptruck
