#pragma once

// Parametric longitudinal truck used as ground truth: first-order engine and
// brake lags, a speed-scheduled gearbox with hysteresis, quadratic drag,
// rolling resistance and road grade.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/error.hpp"

namespace deeptruck {

inline constexpr double kGravity = 9.81;

struct PlantConfig {
  double mass = 15000.0;                 // kg
  double max_engine_torque = 1800.0;     // N*m at 100 % engine command
  std::vector<double> gear_ratios{5.0, 4.0, 3.2, 2.6, 2.1, 1.7, 1.4, 1.15, 0.95, 0.8};
  double final_drive_ratio = 3.5;
  // shift_up_speed[g]: leave gear g for g+1 above this speed.
  // shift_down_speed[g]: return from g+1 to g below this speed.
  std::vector<double> shift_up_speed{3.0, 5.5, 8.0, 11.0, 14.0, 17.0, 20.0, 24.0, 28.0};
  std::vector<double> shift_down_speed{2.0, 4.5, 7.0, 10.0, 13.0, 16.0, 19.0, 23.0, 27.0};
  double wheel_radius = 0.5;                    // m
  double drag_coefficient = 0.6;                // Cd
  double frontal_area = 9.0;                    // m^2
  double air_density = 1.225;                   // kg/m^3
  double rolling_resistance_coefficient = 0.006;
  double max_brake_decel = 6.0;                 // m/s^2 at 100 % brake
  double brake_lag_time_constant = 0.4;         // s
  double engine_lag_time_constant = 0.3;        // s
  double idle_fuel_rate = 0.6;                  // cm^3/s
  double fuel_per_torque = 0.008;               // cm^3/(s*N*m)
  double dt = 0.1;                              // s

  std::size_t gear_count() const { return gear_ratios.size(); }

  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x))
        throw Error(ErrorKind::InvalidInput, std::string("plant: ") + name + " must be positive");
    };
    positive(mass, "mass");
    positive(max_engine_torque, "max_engine_torque");
    positive(final_drive_ratio, "final_drive_ratio");
    positive(wheel_radius, "wheel_radius");
    positive(drag_coefficient, "drag_coefficient");
    positive(frontal_area, "frontal_area");
    positive(air_density, "air_density");
    positive(rolling_resistance_coefficient, "rolling_resistance_coefficient");
    positive(max_brake_decel, "max_brake_decel");
    positive(brake_lag_time_constant, "brake_lag_time_constant");
    positive(engine_lag_time_constant, "engine_lag_time_constant");
    positive(idle_fuel_rate, "idle_fuel_rate");
    positive(fuel_per_torque, "fuel_per_torque");
    positive(dt, "dt");
    if (gear_ratios.empty())
      throw Error(ErrorKind::InvalidInput, "plant: gear table is empty");
    for (std::size_t g = 0; g < gear_ratios.size(); ++g) {
      positive(gear_ratios[g], "gear ratio");
      if (g > 0 && !(gear_ratios[g] < gear_ratios[g - 1]))
        throw Error(ErrorKind::InvalidInput, "plant: gear ratios must be strictly decreasing");
    }
    const std::size_t bands = gear_ratios.size() - 1;
    if (shift_up_speed.size() != bands || shift_down_speed.size() != bands)
      throw Error(ErrorKind::InvalidInput, "plant: need one shift speed pair per gear boundary");
    for (std::size_t g = 0; g < bands; ++g) {
      positive(shift_up_speed[g], "shift_up_speed");
      positive(shift_down_speed[g], "shift_down_speed");
      if (!(shift_down_speed[g] < shift_up_speed[g]))
        throw Error(ErrorKind::InvalidInput, "plant: empty hysteresis band at gear " + std::to_string(g));
      if (g > 0 && !(shift_up_speed[g] > shift_up_speed[g - 1]))
        throw Error(ErrorKind::InvalidInput, "plant: shift speeds must increase with gear");
    }
  }

  /// Tractive force per N*m of engine torque in `gear`.
  double traction_per_torque(std::size_t gear) const {
    return gear_ratios.at(gear) * final_drive_ratio / wheel_radius;
  }

  double drag_force(double v) const { return 0.5 * air_density * drag_coefficient * frontal_area * v * v; }

  static PlantConfig from_config(const Config& c) {
    PlantConfig p;
    p.mass = c.get_double("mass", p.mass);
    p.max_engine_torque = c.get_double("max_engine_torque", p.max_engine_torque);
    p.gear_ratios = c.get_doubles("gear_ratios", p.gear_ratios);
    p.final_drive_ratio = c.get_double("final_drive_ratio", p.final_drive_ratio);
    p.shift_up_speed = c.get_doubles("shift_up_speed", p.shift_up_speed);
    p.shift_down_speed = c.get_doubles("shift_down_speed", p.shift_down_speed);
    p.wheel_radius = c.get_double("wheel_radius", p.wheel_radius);
    p.drag_coefficient = c.get_double("drag_coefficient", p.drag_coefficient);
    p.frontal_area = c.get_double("frontal_area", p.frontal_area);
    p.air_density = c.get_double("air_density", p.air_density);
    p.rolling_resistance_coefficient =
        c.get_double("rolling_resistance_coefficient", p.rolling_resistance_coefficient);
    p.max_brake_decel = c.get_double("max_brake_decel", p.max_brake_decel);
    p.brake_lag_time_constant = c.get_double("brake_lag_time_constant", p.brake_lag_time_constant);
    p.engine_lag_time_constant = c.get_double("engine_lag_time_constant", p.engine_lag_time_constant);
    p.idle_fuel_rate = c.get_double("idle_fuel_rate", p.idle_fuel_rate);
    p.fuel_per_torque = c.get_double("fuel_per_torque", p.fuel_per_torque);
    p.dt = c.get_double("dt", p.dt);
    p.validate();
    return p;
  }

  static PlantConfig load(const std::string& path) { return from_config(Config::load(path)); }

  std::string to_text() const {
    auto list = [](const std::vector<double>& xs) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + format_double(xs[i]);
      return s;
    };
    std::ostringstream o;
    o << "mass = " << format_double(mass) << "\n"
      << "max_engine_torque = " << format_double(max_engine_torque) << "\n"
      << "gear_ratios = " << list(gear_ratios) << "\n"
      << "final_drive_ratio = " << format_double(final_drive_ratio) << "\n"
      << "shift_up_speed = " << list(shift_up_speed) << "\n"
      << "shift_down_speed = " << list(shift_down_speed) << "\n"
      << "wheel_radius = " << format_double(wheel_radius) << "\n"
      << "drag_coefficient = " << format_double(drag_coefficient) << "\n"
      << "frontal_area = " << format_double(frontal_area) << "\n"
      << "air_density = " << format_double(air_density) << "\n"
      << "rolling_resistance_coefficient = " << format_double(rolling_resistance_coefficient) << "\n"
      << "max_brake_decel = " << format_double(max_brake_decel) << "\n"
      << "brake_lag_time_constant = " << format_double(brake_lag_time_constant) << "\n"
      << "engine_lag_time_constant = " << format_double(engine_lag_time_constant) << "\n"
      << "idle_fuel_rate = " << format_double(idle_fuel_rate) << "\n"
      << "fuel_per_torque = " << format_double(fuel_per_torque) << "\n"
      << "dt = " << format_double(dt) << "\n";
    return o.str();
  }

  std::uint64_t hash() const { return fnv1a64(to_text()); }
};

struct PlantState {
  double v = 0.0;                      // m/s
  std::size_t current_gear = 0;
  double engine_torque_actual = 0.0;   // N*m
  double brake_decel_actual = 0.0;     // m/s^2
};

struct ControlInput {
  double engine_cmd = 0.0;  // % of max torque
  double brake_cmd = 0.0;   // %
};

struct Response {
  double a = 0.0;
  double v = 0.0;
  double f_rate = 0.0;
};

struct PlantStepResult {
  PlantState state;
  Response response;
};

/// Gear after one hysteresis decision at speed v; at most one shift per call.
inline std::size_t select_gear(std::size_t gear, double v, const PlantConfig& cfg) {
  const std::size_t top = cfg.gear_count() - 1;
  if (gear < top && v > cfg.shift_up_speed[gear]) return gear + 1;
  if (gear > 0 && v < cfg.shift_down_speed[gear - 1]) return gear - 1;
  return gear;
}

/// Lowest-hysteresis-consistent gear for a vehicle already rolling at v.
inline std::size_t gear_for_speed(double v, const PlantConfig& cfg) {
  std::size_t g = 0;
  while (g + 1 < cfg.gear_count() && v > cfg.shift_up_speed[g]) ++g;
  return g;
}

inline double grade_force(double grade_percent, const PlantConfig& cfg) {
  return cfg.mass * kGravity * std::sin(std::atan(grade_percent / 100.0));
}

inline double rolling_force(double v, double grade_percent, const PlantConfig& cfg) {
  if (v <= 0.0) return 0.0;
  return cfg.rolling_resistance_coefficient * cfg.mass * kGravity * std::cos(std::atan(grade_percent / 100.0));
}

inline PlantStepResult plant_step(const PlantState& state, const ControlInput& u, double grade_percent,
                                  const PlantConfig& cfg) {
  if (!std::isfinite(u.engine_cmd) || !std::isfinite(u.brake_cmd) || !std::isfinite(grade_percent) ||
      !std::isfinite(state.v))
    throw Error(ErrorKind::InvalidInput, "plant_step: non-finite input");
  if (u.engine_cmd < 0.0 || u.engine_cmd > 100.0 || u.brake_cmd < 0.0 || u.brake_cmd > 100.0)
    throw Error(ErrorKind::InvalidInput, "plant_step: commands must lie in [0, 100] %");
  if (std::abs(grade_percent) > 30.0) throw Error(ErrorKind::InvalidInput, "plant_step: |grade| > 30 %");
  if (state.current_gear >= cfg.gear_count()) throw Error(ErrorKind::InvalidInput, "plant_step: gear out of range");

  PlantStepResult out;
  PlantState& next = out.state;
  const double dt = cfg.dt;

  const double engine_target = u.engine_cmd / 100.0 * cfg.max_engine_torque;
  const double brake_target = u.brake_cmd / 100.0 * cfg.max_brake_decel;
  next.engine_torque_actual = state.engine_torque_actual +
      (engine_target - state.engine_torque_actual) * (1.0 - std::exp(-dt / cfg.engine_lag_time_constant));
  next.brake_decel_actual = state.brake_decel_actual +
      (brake_target - state.brake_decel_actual) * (1.0 - std::exp(-dt / cfg.brake_lag_time_constant));
  next.engine_torque_actual = std::clamp(next.engine_torque_actual, 0.0, cfg.max_engine_torque);
  next.brake_decel_actual = std::clamp(next.brake_decel_actual, 0.0, cfg.max_brake_decel);

  next.current_gear = select_gear(state.current_gear, state.v, cfg);

  const double traction = next.engine_torque_actual * cfg.traction_per_torque(next.current_gear);
  const double resist =
      cfg.drag_force(state.v) + rolling_force(state.v, grade_percent, cfg) + grade_force(grade_percent, cfg);
  const double accel = (traction - resist) / cfg.mass - next.brake_decel_actual;

  next.v = std::max(state.v + accel * dt, 0.0);
  out.response.a = (next.v - state.v) / dt;  // effective, so v(k+1) = v(k) + a(k+1) dt holds in the data
  out.response.v = next.v;
  out.response.f_rate = cfg.idle_fuel_rate + cfg.fuel_per_torque * next.engine_torque_actual;
  return out;
}

/// A plant at rest, or rolling at `v` in the gear a driver would hold there.
inline PlantState plant_state_at(double v, const PlantConfig& cfg) {
  PlantState s;
  s.v = v;
  s.current_gear = gear_for_speed(v, cfg);
  return s;
}

}  // namespace deeptruck
