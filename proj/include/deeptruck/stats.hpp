#pragma once

// Per-time-step error statistics across independent trials, for open-loop
// model validation and closed-loop controller evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/cacc_env.hpp"
#include "deeptruck/deepmodel.hpp"
#include "deeptruck/episode.hpp"
#include "deeptruck/parallel.hpp"
#include "deeptruck/policy.hpp"
#include "deeptruck/trainer.hpp"

namespace deeptruck {

/// Running mean/variance/min/max (Welford).
struct RunningStat {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
    min = std::min(min, x);
    max = std::max(max, x);
  }

  /// Population standard deviation; 0 for a single sample.
  double std() const { return n > 0 ? std::sqrt(std::max(m2, 0.0) / static_cast<double>(n)) : 0.0; }
};

/// stats[c][k] summarizes channel c at step k over the trials that reached k.
struct ErrorStatSeries {
  std::vector<std::string> channels;
  std::vector<std::vector<RunningStat>> stats;
  long trials = 0;
  long excluded = 0;

  ErrorStatSeries() = default;
  ErrorStatSeries(std::vector<std::string> names, std::size_t steps)
      : channels(std::move(names)), stats(channels.size(), std::vector<RunningStat>(steps)) {}

  std::size_t steps() const { return stats.empty() ? 0 : stats.front().size(); }

  /// Adds one trial; errors(c, k) for k < errors.cols().
  void add_trial(const MatrixXd& errors) {
    if (errors.rows() != static_cast<Index>(channels.size()) || errors.cols() > static_cast<Index>(steps()))
      throw Error(ErrorKind::Shape, "error trial does not match the series shape");
    for (std::size_t c = 0; c < channels.size(); ++c)
      for (Index k = 0; k < errors.cols(); ++k) stats[c][static_cast<std::size_t>(k)].add(errors(c, k));
    ++trials;
  }

  std::size_t channel(const std::string& name) const {
    for (std::size_t c = 0; c < channels.size(); ++c)
      if (channels[c] == name) return c;
    throw Error(ErrorKind::InvalidInput, "no channel '" + name + "'");
  }

  /// Columns: k, t, then mean/std/min/max/count per channel.
  void write_csv(std::ostream& out, double dt) const {
    out << "k,t";
    for (const auto& c : channels) out << ',' << c << "_mean," << c << "_std," << c << "_min," << c << "_max," << c << "_n";
    out << "\n";
    for (std::size_t k = 0; k < steps(); ++k) {
      out << k << ',' << format_double(static_cast<double>(k) * dt);
      for (std::size_t c = 0; c < channels.size(); ++c) {
        const RunningStat& s = stats[c][k];
        if (s.n == 0) {
          out << ",,,,,0";
          continue;
        }
        out << ',' << format_double(s.mean) << ',' << format_double(s.std()) << ',' << format_double(s.min) << ','
            << format_double(s.max) << ',' << s.n;
      }
      out << "\n";
    }
  }

  void write_csv(const std::filesystem::path& path, double dt) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
    write_csv(out, dt);
  }
};

/// Equal-width bins over [lo, hi]; values outside are clamped into the end bins.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<long> counts;

  Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

  void add(double x) {
    const double u = (x - lo) / (hi - lo) * static_cast<double>(counts.size());
    const auto b = static_cast<long>(std::floor(u));
    counts[static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(counts.size()) - 1))] += 1;
  }

  double edge(std::size_t i) const { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size()); }
};

struct ScenarioSummary {
  Histogram initial_speed{0.0, 35.0, 10};
  Histogram visited_speed{0.0, 35.0, 10};
  Histogram visited_grade{-3.0, 3.0, 10};

  std::string to_csv() const {
    std::ostringstream o;
    o << "histogram,bin_lo,bin_hi,count\n";
    auto emit = [&](const char* name, const Histogram& h) {
      for (std::size_t i = 0; i < h.counts.size(); ++i)
        o << name << ',' << format_double(h.edge(i)) << ',' << format_double(h.edge(i + 1)) << ',' << h.counts[i]
          << "\n";
    };
    emit("initial_speed", initial_speed);
    emit("visited_speed", visited_speed);
    emit("visited_grade", visited_grade);
    return o.str();
  }
};

struct ModelValidation {
  ErrorStatSeries series;  // channels a, v, f_rate; step 0 is the seeded initial output
  ScenarioSummary scenario;
  std::vector<Slice> windows;
  std::vector<double> max_abs_v_error;  // per window; NaN when the trial was excluded
  std::vector<std::string> failures;
};

/// Open-loop validation: each of `trials` windows of `horizon` steps is
/// simulated in deployment form from its ground-truth y(0) and compared with
/// the recorded outputs. A trial whose rollout fails is excluded and counted.
inline ModelValidation model_error_stats(const DeepModelParams& p, const std::vector<Episode>& validation,
                                         std::size_t horizon, std::size_t trials, std::uint64_t seed,
                                         unsigned threads = 1, double grade_limit = 3.0) {
  std::vector<const Episode*> eps;
  for (const auto& e : validation) eps.push_back(&e);
  ModelValidation out;
  out.windows = fixed_windows(eps, horizon, trials, seed);
  out.series = ErrorStatSeries({"a", "v", "f_rate"}, horizon + 1);
  out.scenario.visited_grade = Histogram(-grade_limit, grade_limit, 10);

  std::vector<MatrixXd> errors(out.windows.size());
  std::vector<std::string> failure(out.windows.size());
  parallel_for(out.windows.size(), threads, [&](std::size_t i) {
    const Slice& w = out.windows[i];
    try {
      const auto [u, wg] = episode_inputs(*w.episode, w.k0, horizon, p.io().w_dim);
      const MatrixXd y = forward_deployment(p, u, wg, episode_y(*w.episode, w.k0), horizon);
      MatrixXd e(kYDim, horizon + 1);
      for (std::size_t j = 0; j <= horizon; ++j) e.col(static_cast<Index>(j)) = y.col(static_cast<Index>(j)) - episode_y(*w.episode, w.k0 + j);
      errors[i] = std::move(e);
    } catch (const Error& ex) {
      failure[i] = ex.what();
    }
  });
  out.max_abs_v_error.assign(out.windows.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < out.windows.size(); ++i) {
    const Slice& w = out.windows[i];
    out.scenario.initial_speed.add(w.episode->v[w.k0]);
    for (std::size_t j = 0; j <= horizon; ++j) {
      out.scenario.visited_speed.add(w.episode->v[w.k0 + j]);
      out.scenario.visited_grade.add(w.episode->has_grade() ? w.episode->grade[w.k0 + j] : 0.0);
    }
    if (!failure[i].empty()) {
      ++out.series.excluded;
      out.failures.push_back("trial " + std::to_string(i) + ": " + failure[i]);
      continue;
    }
    out.series.add_trial(errors[i]);
    out.max_abs_v_error[i] = errors[i].row(kOutV).cwiseAbs().maxCoeff();
  }
  return out;
}

struct ControlEvaluation {
  ErrorStatSeries series;  // channels gap_error, time_gap_error, speed_error
  std::vector<Trajectory> rollouts;
  long crashes = 0;
};

/// Deterministic (mean-action) rollouts of `policy`; one stream per trial.
inline ControlEvaluation control_error_stats(const CaccEnv& env, const PolicyFn& policy, std::size_t trials,
                                             std::uint64_t seed, unsigned threads = 1) {
  ControlEvaluation out;
  const auto horizon = static_cast<std::size_t>(env.config().horizon);
  out.series = ErrorStatSeries({"gap_error", "time_gap_error", "speed_error"}, horizon);
  out.rollouts.resize(trials);
  parallel_for(trials, threads, [&](std::size_t i) {
    Rng rng = stream_rng(seed, i, 0x6576616cULL);
    out.rollouts[i] = rollout(env, policy, rng, env.config().horizon);
  });
  for (const auto& tr : out.rollouts) {
    MatrixXd e(3, static_cast<Index>(tr.size()));
    for (std::size_t k = 0; k < tr.size(); ++k) {
      e(0, static_cast<Index>(k)) = tr.steps[k].gap_error;
      e(1, static_cast<Index>(k)) = tr.steps[k].time_gap_error;
      e(2, static_cast<Index>(k)) = tr.steps[k].speed_error;
    }
    out.series.add_trial(e);
    out.crashes += tr.crashed ? 1 : 0;
  }
  return out;
}

inline ControlEvaluation control_error_stats(const CaccEnv& env, const PolicyParams& p, std::size_t trials,
                                             std::uint64_t seed, unsigned threads = 1) {
  return control_error_stats(env, as_policy_fn(p, false), trials, seed, threads);
}

/// Settling summary of one rollout: the largest |error| from the given steps on.
struct SettlingCheck {
  double max_abs_time_gap_error = 0.0;
  double max_abs_speed_error = 0.0;
  bool complete = false;
};

inline SettlingCheck settling(const Trajectory& tr, std::size_t time_gap_from, std::size_t speed_from,
                              std::size_t horizon) {
  SettlingCheck s;
  s.complete = !tr.crashed && tr.size() == horizon;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (k >= time_gap_from) s.max_abs_time_gap_error = std::max(s.max_abs_time_gap_error, std::abs(tr.steps[k].time_gap_error));
    if (k >= speed_from) s.max_abs_speed_error = std::max(s.max_abs_speed_error, std::abs(tr.steps[k].speed_error));
  }
  return s;
}

}  // namespace deeptruck
