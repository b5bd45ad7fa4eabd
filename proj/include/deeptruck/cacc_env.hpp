#pragma once

// Two-truck CACC environment. The leader cruises at constant speed; the ego
// truck is driven either by a learned deep model or by the surrogate plant.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/deepmodel.hpp"
#include "deeptruck/error.hpp"
#include "deeptruck/plant.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

enum class GradeMode { Flat, Graded };

inline std::string to_string(GradeMode m) { return m == GradeMode::Flat ? "flat" : "graded"; }

inline GradeMode parse_grade_mode(const std::string& s) {
  if (s == "flat") return GradeMode::Flat;
  if (s == "graded") return GradeMode::Graded;
  throw Error(ErrorKind::InvalidInput, "grade_mode must be 'flat' or 'graded', got '" + s + "'");
}

struct CaccConfig {
  double dt = 0.1;
  long horizon = 800;
  double alpha_p = 1.0;
  double alpha_v = 1.0;
  double alpha_E = 1e-4;
  double alpha_B = 1e-4;
  double alpha_crash = 1e6;
  double d_safety = 5.0;  // m
  double v_leader_min = 8.3;
  double v_leader_max = 22.2;
  double speed_error_range = 1.39;     // ego speed = leader + U(-r, r)
  double position_error_range = 1.39;  // gap = v_ego * Tg + U(-r, r)
  double tg_min = 2.0;
  double tg_max = 5.0;
  double grade_min = -3.0;  // %
  double grade_max = 3.0;
  GradeMode grade_mode = GradeMode::Flat;
  double gamma = 0.9999;
  double idle_fuel_rate = 0.6;  // warm-start fuel output for the deep model

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw Error(ErrorKind::InvalidInput, "cacc: " + what);
    };
    check(dt > 0.0 && std::isfinite(dt), "dt must be positive");
    check(horizon > 0, "horizon must be positive");
    check(alpha_p >= 0 && alpha_v >= 0 && alpha_E >= 0 && alpha_B >= 0 && alpha_crash >= 0,
          "reward weights must be nonnegative");
    check(d_safety >= 0.0, "d_safety must be nonnegative");
    check(0.0 <= v_leader_min && v_leader_min <= v_leader_max, "leader speed range is not ordered");
    check(speed_error_range >= 0.0 && position_error_range >= 0.0, "error ranges must be nonnegative");
    check(0.0 < tg_min && tg_min <= tg_max, "time-gap range is not ordered");
    check(grade_min <= grade_max && std::abs(grade_min) <= 30.0 && std::abs(grade_max) <= 30.0,
          "grade range is not ordered or too steep");
    check(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    check(v_leader_min - speed_error_range >= 0.0, "initial ego speed could be negative");
    check(v_leader_min - speed_error_range > 0.0 &&
              (v_leader_min - speed_error_range) * tg_min - position_error_range > d_safety,
          "initial gap could start inside the safety distance");
  }

  Index obs_dim() const { return grade_mode == GradeMode::Flat ? 4 : 5; }

  static CaccConfig from_config(const Config& c) {
    CaccConfig e;
    e.dt = c.get_double("dt", e.dt);
    e.horizon = c.get_int("horizon", e.horizon);
    e.alpha_p = c.get_double("alpha_p", e.alpha_p);
    e.alpha_v = c.get_double("alpha_v", e.alpha_v);
    e.alpha_E = c.get_double("alpha_E", e.alpha_E);
    e.alpha_B = c.get_double("alpha_B", e.alpha_B);
    e.alpha_crash = c.get_double("alpha_crash", e.alpha_crash);
    e.d_safety = c.get_double("d_safety", e.d_safety);
    e.v_leader_min = c.get_double("v_leader_min", e.v_leader_min);
    e.v_leader_max = c.get_double("v_leader_max", e.v_leader_max);
    e.speed_error_range = c.get_double("speed_error_range", e.speed_error_range);
    e.position_error_range = c.get_double("position_error_range", e.position_error_range);
    e.tg_min = c.get_double("tg_min", e.tg_min);
    e.tg_max = c.get_double("tg_max", e.tg_max);
    e.grade_min = c.get_double("grade_min", e.grade_min);
    e.grade_max = c.get_double("grade_max", e.grade_max);
    e.grade_mode = parse_grade_mode(c.get_string("grade_mode", to_string(e.grade_mode)));
    e.gamma = c.get_double("gamma", e.gamma);
    e.idle_fuel_rate = c.get_double("idle_fuel_rate", e.idle_fuel_rate);
    e.validate();
    return e;
  }

  std::string to_text() const {
    std::ostringstream o;
    o << "dt = " << format_double(dt) << "\n"
      << "horizon = " << horizon << "\n"
      << "alpha_p = " << format_double(alpha_p) << "\n"
      << "alpha_v = " << format_double(alpha_v) << "\n"
      << "alpha_E = " << format_double(alpha_E) << "\n"
      << "alpha_B = " << format_double(alpha_B) << "\n"
      << "alpha_crash = " << format_double(alpha_crash) << "\n"
      << "d_safety = " << format_double(d_safety) << "\n"
      << "v_leader_min = " << format_double(v_leader_min) << "\n"
      << "v_leader_max = " << format_double(v_leader_max) << "\n"
      << "speed_error_range = " << format_double(speed_error_range) << "\n"
      << "position_error_range = " << format_double(position_error_range) << "\n"
      << "tg_min = " << format_double(tg_min) << "\n"
      << "tg_max = " << format_double(tg_max) << "\n"
      << "grade_min = " << format_double(grade_min) << "\n"
      << "grade_max = " << format_double(grade_max) << "\n"
      << "grade_mode = " << to_string(grade_mode) << "\n"
      << "gamma = " << format_double(gamma) << "\n"
      << "idle_fuel_rate = " << format_double(idle_fuel_rate) << "\n";
    return o.str();
  }
};

/// Draws made at reset, kept so the initial condition can be reconstructed.
struct ResetDraws {
  double v_leader = 0.0;
  double speed_offset = 0.0;
  double tg_target = 0.0;
  double position_offset = 0.0;
  double grade = 0.0;
};

struct CaccState {
  double p_leader = 0.0;
  double p_ego = 0.0;
  double v_leader = 0.0;
  double v_ego = 0.0;
  double tg_target = 0.0;
  double grade = 0.0;  // %
  long step = 0;
  DeploymentState model;  // used when the ego is a deep model
  PlantState plant;       // used when the ego is the surrogate plant
  ResetDraws draws;

  double gap() const { return p_leader - p_ego; }
  double desired_gap() const { return v_ego * tg_target; }
  double gap_error() const { return gap() - desired_gap(); }
  double speed_error() const { return v_leader - v_ego; }
  /// Time-gap error in seconds; the gap error expressed at the current ego speed.
  double time_gap_error() const { return v_ego > 0.0 ? gap_error() / v_ego : 0.0; }
};

struct Action {
  double engine = 0.0;  // %
  double brake = 0.0;   // %
};

inline Action clamp_action(Action a) {
  auto c = [](double x) { return std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 100.0); };
  return {c(a.engine), c(a.brake)};
}

struct StepResult {
  CaccState state;
  double reward = 0.0;
  bool crashed = false;
  bool done = false;
};

class CaccEnv {
 public:
  /// Ego driven by a deep model. The model must outlive the environment.
  CaccEnv(CaccConfig cfg, const DeepModelParams& model) : cfg_(std::move(cfg)), model_(&model) {
    cfg_.validate();
    if (cfg_.grade_mode == GradeMode::Graded && model.io().w_dim == 0)
      throw Error(ErrorKind::InvalidInput, "graded environment needs a model trained with a grade channel");
    if (std::abs(model.io().dt - cfg_.dt) > 1e-12)
      throw Error(ErrorKind::InvalidInput, "model dt does not match environment dt");
  }

  /// Ego driven by the surrogate plant.
  CaccEnv(CaccConfig cfg, PlantConfig plant) : cfg_(std::move(cfg)), plant_(std::move(plant)) {
    cfg_.validate();
    plant_->validate();
    if (std::abs(plant_->dt - cfg_.dt) > 1e-12)
      throw Error(ErrorKind::InvalidInput, "plant dt does not match environment dt");
  }

  const CaccConfig& config() const { return cfg_; }
  bool uses_model() const { return model_ != nullptr; }
  Index obs_dim() const { return cfg_.obs_dim(); }

  /// Initial state from explicit draws.
  CaccState reset_from(const ResetDraws& d) const {
    CaccState s;
    s.draws = d;
    s.v_leader = d.v_leader;
    s.v_ego = d.v_leader + d.speed_offset;
    s.tg_target = d.tg_target;
    s.grade = cfg_.grade_mode == GradeMode::Graded ? d.grade : 0.0;
    s.p_leader = 0.0;
    s.p_ego = -(s.v_ego * s.tg_target + d.position_offset);
    s.step = 0;
    if (model_) {
      VectorXd y0(kYDim);
      y0 << 0.0, s.v_ego, cfg_.idle_fuel_rate;
      s.model = DeploymentState::start(*model_, y0);
    } else {
      s.plant = plant_state_at(s.v_ego, *plant_);
    }
    return s;
  }

  CaccState reset(Rng& rng) const {
    ResetDraws d;
    d.v_leader = uniform(rng, cfg_.v_leader_min, cfg_.v_leader_max);
    d.speed_offset = uniform(rng, -cfg_.speed_error_range, cfg_.speed_error_range);
    d.tg_target = uniform(rng, cfg_.tg_min, cfg_.tg_max);
    d.position_offset = uniform(rng, -cfg_.position_error_range, cfg_.position_error_range);
    if (cfg_.grade_mode == GradeMode::Graded) d.grade = uniform(rng, cfg_.grade_min, cfg_.grade_max);
    return reset_from(d);
  }

  VectorXd observe(const CaccState& s) const {
    VectorXd o(obs_dim());
    o(0) = s.v_leader;
    o(1) = s.v_ego;
    o(2) = s.gap();
    o(3) = s.desired_gap();
    if (cfg_.grade_mode == GradeMode::Graded) o(4) = s.grade;
    return o;
  }

  bool is_crash(const CaccState& s) const { return s.gap() <= cfg_.d_safety; }

  /// Stage reward of taking (already clamped) action `a` in state `s`.
  double reward(const CaccState& s, const Action& a) const {
    const double ep = s.gap_error();
    const double ev = s.speed_error();
    double r = -cfg_.alpha_p * ep * ep - cfg_.alpha_v * ev * ev - cfg_.alpha_E * a.engine * a.engine -
               cfg_.alpha_B * a.brake * a.brake;
    if (is_crash(s)) r -= cfg_.alpha_crash;
    return r;
  }

  /// Advances one step; the action is clamped to [0, 100] before use.
  StepResult step(const CaccState& s, Action raw) const {
    const Action a = clamp_action(raw);
    StepResult out;
    out.reward = reward(s, a);
    out.crashed = is_crash(s);
    CaccState& n = out.state;
    n = s;
    n.step = s.step + 1;
    n.p_leader = s.v_leader * static_cast<double>(n.step) * cfg_.dt;  // constant-speed leader from 0
    n.p_ego = s.p_ego + s.v_ego * cfg_.dt;
    if (model_) {
      VectorXd u(2);
      u << a.engine, a.brake;
      VectorXd w = VectorXd::Zero(model_->io().w_dim);
      if (w.size() == 1) w(0) = s.grade;
      n.model = deploy_step(s.model, u, w, *model_, s.step);
      n.v_ego = n.model.y(kOutV);
    } else {
      const auto r = plant_step(s.plant, ControlInput{a.engine, a.brake}, s.grade, *plant_);
      n.plant = r.state;
      n.v_ego = r.response.v;
    }
    if (!std::isfinite(n.v_ego)) throw DivergenceError(s.step, "ego speed became non-finite");
    out.done = out.crashed || n.step >= cfg_.horizon;
    return out;
  }

 private:
  CaccConfig cfg_;
  const DeepModelParams* model_ = nullptr;
  std::optional<PlantConfig> plant_;
};

/// One logged transition: the state the action was taken in, the raw and the
/// applied action, and the stage reward.
struct Transition {
  VectorXd obs;
  Action raw_action;
  Action action;
  double reward = 0.0;
  double gap_error = 0.0;
  double speed_error = 0.0;
  double time_gap_error = 0.0;
  double grade = 0.0;
};

struct Trajectory {
  std::vector<Transition> steps;
  CaccState final_state;
  ResetDraws draws;
  bool crashed = false;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;

  std::size_t size() const { return steps.size(); }
};

/// Maps an observation to a (raw, unclamped) action.
using PolicyFn = std::function<Action(const VectorXd& obs, Rng& rng)>;

inline double discounted_sum(const std::vector<double>& r, double gamma) {
  double g = 0.0;
  for (std::size_t t = r.size(); t-- > 0;) g = r[t] + gamma * g;
  return g;
}

/// Runs one episode from `start` for at most `horizon` steps; a crash ends it.
inline Trajectory rollout_from(const CaccEnv& env, const CaccState& start, const PolicyFn& policy, Rng& rng,
                               long horizon) {
  if (horizon > env.config().horizon)
    throw Error(ErrorKind::InvalidInput, "rollout horizon exceeds the environment horizon");
  Trajectory tr;
  tr.draws = start.draws;
  CaccState s = start;
  std::vector<double> rewards;
  for (long k = 0; k < horizon; ++k) {
    Transition t;
    t.obs = env.observe(s);
    t.raw_action = policy(t.obs, rng);
    t.action = clamp_action(t.raw_action);
    t.gap_error = s.gap_error();
    t.speed_error = s.speed_error();
    t.time_gap_error = s.time_gap_error();
    t.grade = s.grade;
    StepResult r = env.step(s, t.raw_action);
    t.reward = r.reward;
    rewards.push_back(r.reward);
    tr.steps.push_back(std::move(t));
    s = std::move(r.state);
    if (r.crashed) {
      tr.crashed = true;
      break;
    }
    if (r.done) break;
  }
  if (!tr.crashed && env.is_crash(s)) tr.crashed = true;
  tr.final_state = s;
  tr.discounted_return = discounted_sum(rewards, env.config().gamma);
  for (double r : rewards) tr.undiscounted_return += r;
  return tr;
}

inline Trajectory rollout(const CaccEnv& env, const PolicyFn& policy, Rng& rng, long horizon) {
  const CaccState start = env.reset(rng);
  return rollout_from(env, start, policy, rng, horizon);
}

inline std::string trajectory_header(GradeMode mode) {
  std::string h = "k,v_leader,v_ego,gap,desired_gap";
  if (mode == GradeMode::Graded) h += ",grade";
  h += ",E_cmd,B_cmd,r,gap_error,speed_error";
  return h;
}

inline void write_trajectory(std::ostream& out, const Trajectory& tr, GradeMode mode) {
  out << trajectory_header(mode) << "\n";
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    const Transition& t = tr.steps[k];
    out << k;
    for (Index i = 0; i < t.obs.size(); ++i) out << ',' << format_double(t.obs(i));
    out << ',' << format_double(t.action.engine) << ',' << format_double(t.action.brake) << ','
        << format_double(t.reward) << ',' << format_double(t.gap_error) << ',' << format_double(t.speed_error)
        << "\n";
  }
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& tr, GradeMode mode) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  write_trajectory(out, tr, mode);
}

}  // namespace deeptruck
