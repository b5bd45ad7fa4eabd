#include "helpers.hpp"

using namespace deeptruck;

namespace {

/// Fine-step Euler integration of the continuous force balance with first-order
/// engine and brake lags and the same shift schedule.
double oracle_terminal_speed(const PlantConfig& c, double engine_pct, double brake_pct, double seconds, int substeps) {
  const double h = c.dt / substeps;
  double v = 0.0, torque = 0.0, brake = 0.0;
  std::size_t gear = 0;
  const double torque_target = engine_pct / 100.0 * c.max_engine_torque;
  const double brake_target = brake_pct / 100.0 * c.max_brake_decel;
  const long n = std::lround(seconds / h);
  for (long i = 0; i < n; ++i) {
    if (i % substeps == 0) {
      if (gear + 1 < c.gear_ratios.size() && v > c.shift_up_speed[gear]) ++gear;
      else if (gear > 0 && v < c.shift_down_speed[gear - 1]) --gear;
    }
    torque += h * (torque_target - torque) / c.engine_lag_time_constant;
    brake += h * (brake_target - brake) / c.brake_lag_time_constant;
    const double traction = torque * c.gear_ratios[gear] * c.final_drive_ratio / c.wheel_radius;
    const double drag = 0.5 * c.air_density * c.drag_coefficient * c.frontal_area * v * v;
    const double roll = v > 0.0 ? c.rolling_resistance_coefficient * c.mass * 9.81 : 0.0;
    v = std::max(v + h * ((traction - drag - roll) / c.mass - brake), 0.0);
  }
  return v;
}

}  // namespace

TEST(Plant, RestIsEquilibrium) {
  const PlantConfig c;
  const auto r = plant_step(PlantState{}, ControlInput{}, 0.0, c);
  EXPECT_EQ(r.response.a, 0.0);
  EXPECT_EQ(r.response.v, 0.0);
  EXPECT_EQ(r.state.v, 0.0);
  EXPECT_DOUBLE_EQ(r.response.f_rate, c.idle_fuel_rate);
}

TEST(Plant, FullBrakeDecelerates) {
  const PlantConfig c;
  const double roll = c.rolling_resistance_coefficient * kGravity;
  for (double v0 : {1.0, 5.0, 12.0, 25.0, 34.0}) {
    PlantState s = plant_state_at(v0, c);
    for (int k = 0; k < 200 && s.v > 0.0; ++k) {
      const auto r = plant_step(s, ControlInput{0.0, 100.0}, 0.0, c);
      EXPECT_LE(r.state.v, s.v);
      if (r.state.v > 0.0) EXPECT_LE(r.response.a, -roll + 1e-12);
      s = r.state;
    }
  }
}

TEST(Plant, HalfThrottleFromRestMatchesFineStepOracle) {
  const PlantConfig c;
  PlantState s;
  for (int k = 0; k < 100; ++k) s = plant_step(s, ControlInput{50.0, 0.0}, 0.0, c).state;
  const double oracle = oracle_terminal_speed(c, 50.0, 0.0, 10.0, 10);
  ASSERT_GT(oracle, 1.0);
  EXPECT_NEAR(s.v, oracle, 0.01 * oracle);
}

TEST(Plant, BitIdenticalForIdenticalInputs) {
  const PlantConfig c;
  PlantState s = plant_state_at(13.0, c);
  s.engine_torque_actual = 400.0;
  const auto a = plant_step(s, ControlInput{37.5, 0.0}, 1.25, c);
  const auto b = plant_step(s, ControlInput{37.5, 0.0}, 1.25, c);
  EXPECT_EQ(a.response.a, b.response.a);
  EXPECT_EQ(a.response.v, b.response.v);
  EXPECT_EQ(a.response.f_rate, b.response.f_rate);
  EXPECT_EQ(a.state.current_gear, b.state.current_gear);
  EXPECT_EQ(a.state.engine_torque_actual, b.state.engine_torque_actual);
}

TEST(Plant, SpeedNeverNegative) {
  const PlantConfig c;
  Rng rng(11);
  PlantState s = plant_state_at(3.0, c);
  for (int k = 0; k < 20000; ++k) {
    ControlInput u;
    if (uniform(rng, 0, 1) < 0.5) u.engine_cmd = uniform(rng, 0, 100);
    else u.brake_cmd = uniform(rng, 0, 100);
    s = plant_step(s, u, uniform(rng, -3, 3), c).state;
    ASSERT_GE(s.v, 0.0);
  }
}

TEST(Plant, CoastingOnFlatGroundNeverSpeedsUp) {
  const PlantConfig c;
  for (double v0 : {0.5, 8.0, 20.0, 35.0}) {
    PlantState s = plant_state_at(v0, c);
    for (int k = 0; k < 600; ++k) {
      const auto n = plant_step(s, ControlInput{}, 0.0, c).state;
      ASSERT_LE(n.v, s.v);
      s = n;
    }
  }
}

TEST(Plant, GearHysteresisIgnoresSmallOscillation) {
  const PlantConfig c;
  for (std::size_t g = 0; g + 1 < c.gear_count(); ++g) {
    const double up = c.shift_up_speed[g];
    std::size_t gear = g;
    int changes = 0;
    for (int k = 0; k < 200; ++k) {
      const double v = up + (k % 2 == 0 ? 0.1 : -0.1);
      const std::size_t next = select_gear(gear, v, c);
      changes += next != gear;
      gear = next;
    }
    EXPECT_LE(changes, 1) << "gear " << g;
  }
}

TEST(Plant, ShiftsOncePerBandCrossing) {
  const PlantConfig c;
  std::size_t gear = 0;
  int changes = 0;
  // sweep up through the whole table and back down
  for (int k = 0; k <= 3000; ++k) {
    const double v = 30.0 * (1.0 - std::abs(1.0 - k / 1500.0));
    const std::size_t next = select_gear(gear, v, c);
    changes += next != gear;
    gear = next;
  }
  EXPECT_EQ(changes, 2 * static_cast<int>(c.gear_count() - 1));
}

TEST(Plant, RejectsOutOfRangeCommands) {
  const PlantConfig c;
  EXPECT_THROW(plant_step(PlantState{}, ControlInput{101.0, 0.0}, 0.0, c), Error);
  EXPECT_THROW(plant_step(PlantState{}, ControlInput{0.0, -1.0}, 0.0, c), Error);
  EXPECT_THROW(plant_step(PlantState{}, ControlInput{std::nan(""), 0.0}, 0.0, c), Error);
}

TEST(Plant, ConfigRoundTripsThroughText) {
  PlantConfig c;
  c.mass = 18250.5;
  c.gear_ratios = {4.0, 2.0, 1.0};
  c.shift_up_speed = {5.0, 12.0};
  c.shift_down_speed = {4.0, 10.0};
  const PlantConfig d = PlantConfig::from_config(Config::from_string(c.to_text()));
  EXPECT_EQ(d.to_text(), c.to_text());
  EXPECT_EQ(d.hash(), c.hash());
}

TEST(Plant, ValidationRejectsEmptyHysteresisBand) {
  PlantConfig c;
  c.shift_down_speed[3] = c.shift_up_speed[3];
  EXPECT_THROW(c.validate(), Error);
}
