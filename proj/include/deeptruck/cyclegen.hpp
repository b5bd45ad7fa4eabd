#pragma once

// Stochastic driving-cycle generator.
//
// Speed profiles come from a double integrator driven by a speed-dependent
// random acceleration that is re-sampled on an adaptive time grid: short
// holds when the mean acceleration is large, long holds near the reference
// speed. The raw profile is smoothed and re-integrated through a soft upper
// saturation. Road grade is a smoothed random walk. Three episode families
// are produced on the plant: spanning (tracked speed profiles), coasting and
// braking to standstill.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/episode.hpp"
#include "deeptruck/error.hpp"
#include "deeptruck/plant.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

struct CycleGenConfig {
  double v_min = 0.0;
  double v_max = 35.0;
  double v_ref = 17.5;            // (v_min + v_max) / 2 unless set explicitly
  double mu_a_scaling = 0.3;
  double sigma_a_scaling = 3.0;
  double mu_T = 6.0;              // s, mean hold time
  double sigma_T = 1.0;           // s, std of the hold-time draw
  double dt = 0.1;
  int smoothing_window = 15;      // steps
  double road_walk_step_std = 0.03;  // % per step
  int road_ma_window = 15;        // steps
  double grade_limit = 3.0;       // %
  std::uint64_t seed = 1;

  // episode families
  double spanning_duration = 300.0;   // s
  double coasting_max_duration = 120.0;
  double coasting_stop_margin = 0.5;  // m/s above v_min
  double braking_max_duration = 300.0;
  double brake_cmd_min = 10.0;
  double brake_cmd_max = 100.0;

  void validate() const {
    if (!(v_min >= 0.0 && v_min < v_max)) throw Error(ErrorKind::InvalidInput, "cyclegen: need 0 <= v_min < v_max");
    if (!(mu_a_scaling > 0.0 && sigma_a_scaling > 0.0))
      throw Error(ErrorKind::InvalidInput, "cyclegen: scalings must be positive");
    if (!(dt > 0.0)) throw Error(ErrorKind::InvalidInput, "cyclegen: dt must be positive");
    if (!(mu_T >= dt)) throw Error(ErrorKind::InvalidInput, "cyclegen: mu_T must be >= dt");
    if (!(sigma_T >= 0.0)) throw Error(ErrorKind::InvalidInput, "cyclegen: sigma_T must be >= 0");
    if (smoothing_window < 1 || road_ma_window < 1)
      throw Error(ErrorKind::InvalidInput, "cyclegen: windows must be >= 1");
    if (!(v_ref > 0.0)) throw Error(ErrorKind::InvalidInput, "cyclegen: v_ref must be positive");
    if (!(grade_limit >= 0.0) || !(road_walk_step_std >= 0.0))
      throw Error(ErrorKind::InvalidInput, "cyclegen: road parameters must be nonnegative");
  }

  static CycleGenConfig from_config(const Config& c) {
    CycleGenConfig g;
    g.v_min = c.get_double("v_min", g.v_min);
    g.v_max = c.get_double("v_max", g.v_max);
    g.v_ref = c.get_double("v_ref", 0.5 * (g.v_min + g.v_max));
    g.mu_a_scaling = c.get_double("mu_a_scaling", g.mu_a_scaling);
    g.sigma_a_scaling = c.get_double("sigma_a_scaling", g.sigma_a_scaling);
    g.mu_T = c.get_double("mu_T", g.mu_T);
    g.sigma_T = c.get_double("sigma_T", g.sigma_T);
    g.dt = c.get_double("dt", g.dt);
    g.smoothing_window = static_cast<int>(c.get_int("smoothing_window", g.smoothing_window));
    g.road_walk_step_std = c.get_double("road_walk_step_std", g.road_walk_step_std);
    g.road_ma_window = static_cast<int>(c.get_int("road_ma_window", g.road_ma_window));
    g.grade_limit = c.get_double("grade_limit", g.grade_limit);
    g.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(g.seed)));
    g.spanning_duration = c.get_double("spanning_duration", g.spanning_duration);
    g.coasting_max_duration = c.get_double("coasting_max_duration", g.coasting_max_duration);
    g.coasting_stop_margin = c.get_double("coasting_stop_margin", g.coasting_stop_margin);
    g.braking_max_duration = c.get_double("braking_max_duration", g.braking_max_duration);
    g.brake_cmd_min = c.get_double("brake_cmd_min", g.brake_cmd_min);
    g.brake_cmd_max = c.get_double("brake_cmd_max", g.brake_cmd_max);
    g.validate();
    return g;
  }

  long steps_for(double duration) const { return std::lround(duration / dt); }

  std::string to_text() const {
    std::ostringstream o;
    o << "v_min = " << format_double(v_min) << "\n"
      << "v_max = " << format_double(v_max) << "\n"
      << "v_ref = " << format_double(v_ref) << "\n"
      << "mu_a_scaling = " << format_double(mu_a_scaling) << "\n"
      << "sigma_a_scaling = " << format_double(sigma_a_scaling) << "\n"
      << "mu_T = " << format_double(mu_T) << "\n"
      << "sigma_T = " << format_double(sigma_T) << "\n"
      << "dt = " << format_double(dt) << "\n"
      << "smoothing_window = " << smoothing_window << "\n"
      << "road_walk_step_std = " << format_double(road_walk_step_std) << "\n"
      << "road_ma_window = " << road_ma_window << "\n"
      << "grade_limit = " << format_double(grade_limit) << "\n"
      << "seed = " << seed << "\n"
      << "spanning_duration = " << format_double(spanning_duration) << "\n"
      << "coasting_max_duration = " << format_double(coasting_max_duration) << "\n"
      << "coasting_stop_margin = " << format_double(coasting_stop_margin) << "\n"
      << "braking_max_duration = " << format_double(braking_max_duration) << "\n"
      << "brake_cmd_min = " << format_double(brake_cmd_min) << "\n"
      << "brake_cmd_max = " << format_double(brake_cmd_max) << "\n";
    return o.str();
  }
};

struct SpeedProfile {
  std::vector<double> t;
  std::vector<double> v_raw;
  std::vector<double> a_raw;
  std::vector<double> v_f;
  std::vector<double> a_f;
  std::vector<double> resample_times;  // T_i, s

  std::size_t size() const { return t.size(); }
};

/// Mean-acceleration shape: positive below the reference speed, negative above.
inline double accel_mean_shape(double v, const CycleGenConfig& cfg) { return 1.0 - v / cfg.v_ref; }

/// Spread shape, largest mid-range and vanishing at standstill and at v_max.
inline double accel_std_shape(double v, const CycleGenConfig& cfg) {
  return std::max((v / cfg.v_ref) * (1.0 - v / cfg.v_max), 0.0);
}

inline double sample_acceleration(double v_at_resample, const CycleGenConfig& cfg, Rng& rng) {
  const double mean = cfg.mu_a_scaling * accel_mean_shape(v_at_resample, cfg);
  const double sd = cfg.sigma_a_scaling * accel_std_shape(v_at_resample, cfg);
  return normal(rng, mean, sd);
}

/// Hold length for one hold-time draw, rounded up onto the dt grid; at least one step.
inline long resample_interval_steps(double hold_draw, double mu_a, double dt) {
  const double raw = std::max(hold_draw * (1.0 - std::abs(mu_a)), dt);
  const long steps = static_cast<long>(std::ceil(raw / dt - 1e-9));
  return std::max(steps, 1L);
}

inline double next_resample_time(double T_i, double mu_a, const CycleGenConfig& cfg, Rng& rng) {
  const double draw = normal(rng, cfg.mu_T, cfg.sigma_T);
  const long steps = std::lround(T_i / cfg.dt) + resample_interval_steps(draw, mu_a, cfg.dt);
  return static_cast<double>(steps) * cfg.dt;
}

/// Draws a held acceleration at a resample instant from the speed there.
using AccelSampler = std::function<double(double v, Rng&)>;

inline SpeedProfile integrate_raw_speed(const CycleGenConfig& cfg, Rng& rng, double duration,
                                        const AccelSampler& sampler, double v0) {
  if (!(duration >= cfg.dt)) throw Error(ErrorKind::InvalidInput, "integrate_raw_speed: duration < dt");
  const long n = cfg.steps_for(duration) + 1;
  SpeedProfile p;
  p.t.resize(n);
  p.v_raw.resize(n);
  p.a_raw.resize(n);
  p.v_raw[0] = std::clamp(v0, cfg.v_min, cfg.v_max);
  p.t[0] = 0.0;

  long next_resample = 1;
  double held = 0.0;
  p.a_raw[0] = 0.0;
  for (long k = 1; k < n; ++k) {
    p.t[k] = static_cast<double>(k) * cfg.dt;
    if (k == next_resample) {
      const double v_here = p.v_raw[k - 1];
      held = sampler(v_here, rng);
      p.resample_times.push_back(p.t[k]);
      next_resample = std::lround(next_resample_time(p.t[k], accel_mean_shape(v_here, cfg), cfg, rng) / cfg.dt);
    }
    p.a_raw[k] = held;
    p.v_raw[k] = std::max(std::min(p.v_raw[k - 1] + held * cfg.dt, cfg.v_max), cfg.v_min);
  }
  return p;
}

inline SpeedProfile integrate_raw_speed(const CycleGenConfig& cfg, Rng& rng, double duration) {
  const double v0 = uniform(rng, cfg.v_min, cfg.v_max);
  return integrate_raw_speed(
      cfg, rng, duration, [&cfg](double v, Rng& r) { return sample_acceleration(v, cfg, r); }, v0);
}

/// Centered moving average; the window is truncated at the series ends.
inline std::vector<double> centered_moving_average(const std::vector<double>& x, int window) {
  const long n = static_cast<long>(x.size());
  std::vector<double> out(x.size());
  const long back = (window - 1) / 2;
  const long fwd = window - 1 - back;
  std::vector<double> prefix(n + 1, 0.0);
  for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, i - back);
    const long hi = std::min(n - 1, i + fwd);
    out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// One step of the soft-saturated re-integration.
inline double soft_saturated_speed(double v_prev, double a, const CycleGenConfig& cfg) {
  const double s = std::max(v_prev + a * cfg.dt, cfg.v_min);
  return s / (1.0 + std::exp(0.5 * (s - cfg.v_max)));
}

inline SpeedProfile smooth_and_reintegrate(SpeedProfile p, const CycleGenConfig& cfg) {
  const std::size_t n = p.size();
  const std::vector<double> smoothed = centered_moving_average(p.a_raw, cfg.smoothing_window);
  p.v_f.assign(n, 0.0);
  p.a_f.assign(n, 0.0);
  if (n == 0) return p;
  p.v_f[0] = p.v_raw[0];
  for (std::size_t k = 1; k < n; ++k) p.v_f[k] = soft_saturated_speed(p.v_f[k - 1], smoothed[k], cfg);
  for (std::size_t k = 1; k < n; ++k) p.a_f[k] = (p.v_f[k] - p.v_f[k - 1]) / cfg.dt;
  return p;
}

/// Random-walk grade before smoothing and clamping.
inline std::vector<double> road_random_walk(const CycleGenConfig& cfg, Rng& rng, std::size_t n) {
  std::vector<double> walk(n, 0.0);
  double level = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    level += normal(rng, 0.0, cfg.road_walk_step_std);
    walk[k] = level;
  }
  return walk;
}

inline std::vector<double> generate_road_profile(const CycleGenConfig& cfg, Rng& rng, double duration) {
  if (!(duration >= cfg.dt)) throw Error(ErrorKind::InvalidInput, "generate_road_profile: duration < dt");
  const std::size_t n = static_cast<std::size_t>(cfg.steps_for(duration) + 1);
  auto grade = centered_moving_average(road_random_walk(cfg, rng, n), cfg.road_ma_window);
  for (auto& g : grade) g = std::clamp(g, -cfg.grade_limit, cfg.grade_limit);
  return grade;
}

/// Proportional speed tracker; the deadband keeps engine and brake exclusive.
struct SpeedTracker {
  double engine_gain = 40.0;  // % per m/s
  double brake_gain = 20.0;   // % per m/s
  double deadband = 0.05;     // m/s

  ControlInput command(double v_target, double v) const {
    const double e = v_target - v;
    ControlInput u;
    if (e > deadband) u.engine_cmd = std::clamp(engine_gain * e, 0.0, 100.0);
    else if (e < -deadband) u.brake_cmd = std::clamp(-brake_gain * e, 0.0, 100.0);
    return u;
  }

  static SpeedTracker from_config(const Config& c) {
    SpeedTracker t;
    t.engine_gain = c.get_double("tracker_engine_gain", t.engine_gain);
    t.brake_gain = c.get_double("tracker_brake_gain", t.brake_gain);
    t.deadband = c.get_double("tracker_deadband", t.deadband);
    return t;
  }

  std::string to_text() const {
    return "tracker_engine_gain = " + format_double(engine_gain) + "\ntracker_brake_gain = " +
           format_double(brake_gain) + "\ntracker_deadband = " + format_double(deadband) + "\n";
  }
};

namespace detail {

inline void record_initial(Episode& ep, const PlantState& s, const PlantConfig& plant, double grade) {
  ep.push(0.0, 0.0, 0.0, grade, s.v, 0.0, plant.idle_fuel_rate + plant.fuel_per_torque * s.engine_torque_actual);
}

/// Fills in the command of the last row and appends the plant response as a new row.
inline PlantState advance(Episode& ep, const PlantState& s, const ControlInput& u, double grade_now,
                          double grade_next, const PlantConfig& plant) {
  ep.engine_cmd.back() = u.engine_cmd;
  ep.brake_cmd.back() = u.brake_cmd;
  const auto r = plant_step(s, u, grade_now, plant);
  const double t = ep.t.back() + plant.dt;
  ep.push(t, 0.0, 0.0, grade_next, r.response.v, r.response.a, r.response.f_rate);
  return r.state;
}

inline Episode new_episode(const char* kind, std::uint64_t seed, const PlantConfig& plant) {
  Episode ep;
  ep.dt = plant.dt;
  ep.kind = kind;
  ep.seed = seed;
  ep.plant_hash = plant.hash();
  return ep;
}

}  // namespace detail

inline Episode generate_coasting_episode(const CycleGenConfig& cfg, Rng& rng, const PlantConfig& plant,
                                         std::uint64_t seed = 0) {
  const double v0 = uniform(rng, cfg.v_min, cfg.v_max);
  const auto road = generate_road_profile(cfg, rng, cfg.coasting_max_duration);
  Episode ep = detail::new_episode("coasting", seed, plant);
  PlantState s = plant_state_at(v0, plant);
  detail::record_initial(ep, s, plant, road[0]);
  const std::size_t last = road.size() - 1;
  for (std::size_t k = 0; k < last; ++k) {
    if (s.v <= cfg.v_min + cfg.coasting_stop_margin) break;
    s = detail::advance(ep, s, ControlInput{}, road[k], road[k + 1], plant);
  }
  return ep;
}

inline Episode generate_braking_episode(const CycleGenConfig& cfg, Rng& rng, const PlantConfig& plant,
                                        std::uint64_t seed = 0) {
  const double v0 = uniform(rng, cfg.v_min, cfg.v_max);
  const double brake = uniform(rng, cfg.brake_cmd_min, cfg.brake_cmd_max);
  const auto road = generate_road_profile(cfg, rng, cfg.braking_max_duration);
  Episode ep = detail::new_episode("braking", seed, plant);
  PlantState s = plant_state_at(v0, plant);
  detail::record_initial(ep, s, plant, road[0]);
  const std::size_t last = road.size() - 1;
  for (std::size_t k = 0; k < last && s.v > 0.0; ++k)
    s = detail::advance(ep, s, ControlInput{0.0, brake}, road[k], road[k + 1], plant);
  if (s.v > 0.0) throw Error(ErrorKind::InvalidInput, "braking episode did not reach standstill");
  return ep;
}

/// Tracks a generated speed profile on the plant and logs the plant's actual response.
inline Episode generate_spanning_episode(const CycleGenConfig& cfg, Rng& rng, const PlantConfig& plant,
                                         const SpeedTracker& tracker, std::uint64_t seed = 0,
                                         SpeedProfile* profile_out = nullptr) {
  const SpeedProfile profile = smooth_and_reintegrate(integrate_raw_speed(cfg, rng, cfg.spanning_duration), cfg);
  const auto road = generate_road_profile(cfg, rng, cfg.spanning_duration);
  Episode ep = detail::new_episode("spanning", seed, plant);
  PlantState s = plant_state_at(profile.v_f[0], plant);
  detail::record_initial(ep, s, plant, road[0]);
  for (std::size_t k = 0; k + 1 < profile.size(); ++k) {
    const ControlInput u = tracker.command(profile.v_f[k + 1], s.v);
    s = detail::advance(ep, s, u, road[k], road[k + 1], plant);
  }
  if (profile_out) *profile_out = profile;
  return ep;
}

enum class EpisodeKind { Spanning, Coasting, Braking };

/// Family of the i-th episode of a generated dataset: two spanning, one coasting, one braking.
inline EpisodeKind dataset_episode_kind(std::size_t index) {
  switch (index % 4) {
    case 0:
    case 1: return EpisodeKind::Spanning;
    case 2: return EpisodeKind::Coasting;
    default: return EpisodeKind::Braking;
  }
}

inline Episode generate_dataset_episode(const CycleGenConfig& cfg, const PlantConfig& plant,
                                        const SpeedTracker& tracker, std::size_t index) {
  Rng rng = stream_rng(cfg.seed, index, 0x637963);
  switch (dataset_episode_kind(index)) {
    case EpisodeKind::Spanning: return generate_spanning_episode(cfg, rng, plant, tracker, cfg.seed);
    case EpisodeKind::Coasting: return generate_coasting_episode(cfg, rng, plant, cfg.seed);
    default: return generate_braking_episode(cfg, rng, plant, cfg.seed);
  }
}

/// Episodes until their total duration reaches `hours`.
inline std::vector<Episode> generate_dataset(const CycleGenConfig& cfg, const PlantConfig& plant,
                                             const SpeedTracker& tracker, double hours) {
  std::vector<Episode> out;
  double total = 0.0;
  for (std::size_t i = 0; total < hours * 3600.0; ++i) {
    out.push_back(generate_dataset_episode(cfg, plant, tracker, i));
    total += out.back().duration();
  }
  return out;
}

/// Occupancy of speed deciles split by acceleration sign.
struct CoverageReport {
  std::array<long, 10> accel{};  // a > 0
  std::array<long, 10> decel{};  // a < 0
  std::array<long, 10> hold{};   // a == 0
  double v_lo = 0.0;
  double v_hi = 35.0;

  static std::size_t bin(double v, double lo, double hi) {
    const double x = (v - lo) / (hi - lo) * 10.0;
    return static_cast<std::size_t>(std::clamp(static_cast<long>(std::floor(x)), 0L, 9L));
  }

  void add(double v, double a) {
    const auto b = bin(v, v_lo, v_hi);
    if (a > 0.0) ++accel[b];
    else if (a < 0.0) ++decel[b];
    else ++hold[b];
  }

  bool occupied(std::size_t b) const { return accel[b] + decel[b] + hold[b] > 0; }

  bool all_deciles_occupied() const {
    for (std::size_t b = 0; b < 10; ++b)
      if (!occupied(b)) return false;
    return true;
  }

  bool both_signs_where_occupied() const {
    for (std::size_t b = 0; b < 10; ++b)
      if (occupied(b) && (accel[b] == 0 || decel[b] == 0)) return false;
    return true;
  }

  std::string to_text() const {
    std::ostringstream o;
    o << "# speed decile coverage, [" << v_lo << ", " << v_hi << "] m/s\n";
    o << "bin,v_from,v_to,accel,decel,hold\n";
    for (std::size_t b = 0; b < 10; ++b) {
      const double w = (v_hi - v_lo) / 10.0;
      o << b << ',' << v_lo + w * b << ',' << v_lo + w * (b + 1) << ',' << accel[b] << ',' << decel[b] << ','
        << hold[b] << '\n';
    }
    o << "all_deciles_occupied=" << (all_deciles_occupied() ? "yes" : "no") << "\n";
    o << "both_signs_where_occupied=" << (both_signs_where_occupied() ? "yes" : "no") << "\n";
    return o.str();
  }
};

/// Coverage of `hours` of raw spanning speed profiles.
inline CoverageReport spanning_profile_coverage(const CycleGenConfig& cfg, double hours) {
  CoverageReport rep;
  rep.v_lo = cfg.v_min;
  rep.v_hi = cfg.v_max;
  double total = 0.0;
  for (std::size_t i = 0; total < hours * 3600.0; ++i) {
    Rng rng = stream_rng(cfg.seed, i, 0x636f76);
    const auto p = integrate_raw_speed(cfg, rng, cfg.spanning_duration);
    for (std::size_t k = 1; k < p.size(); ++k) rep.add(p.v_raw[k], p.v_raw[k] - p.v_raw[k - 1]);
    total += p.t.back();
  }
  return rep;
}

}  // namespace deeptruck
