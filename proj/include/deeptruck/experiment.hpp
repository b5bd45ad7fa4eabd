#pragma once

// Pipeline stages and the manifest runner. Each stage is a function of its
// inputs, its config and its seed, and writes into its own directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deeptruck/cacc_env.hpp"
#include "deeptruck/checkpoint.hpp"
#include "deeptruck/checksum.hpp"
#include "deeptruck/config.hpp"
#include "deeptruck/cyclegen.hpp"
#include "deeptruck/episode.hpp"
#include "deeptruck/pg.hpp"
#include "deeptruck/plant.hpp"
#include "deeptruck/policy.hpp"
#include "deeptruck/stats.hpp"
#include "deeptruck/trainer.hpp"

namespace deeptruck {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_episodes(const fs::path& dir, const std::vector<Episode>& eps) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "episode_%05zu.csv", i);
    write_episode(dir / name, eps[i]);
  }
}

// ---------------------------------------------------------------- gen-data

struct DataSpec {
  CycleGenConfig cycle;
  PlantConfig plant;
  SpeedTracker tracker;
  double hours = 4.0;
  double validation_hours = 1.0;
  std::uint64_t validation_seed = 101;
};

/// Training and held-out episodes under out/train and out/validation.
inline void run_gen_data(const DataSpec& spec, const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  const auto train = generate_dataset(spec.cycle, spec.plant, spec.tracker, spec.hours);
  CycleGenConfig vc = spec.cycle;
  vc.seed = spec.validation_seed;
  const auto validation = generate_dataset(vc, spec.plant, spec.tracker, spec.validation_hours);
  write_episodes(out / "train", train);
  write_episodes(out / "validation", validation);
  write_text(out / "plant.cfg", spec.plant.to_text());
  write_text(out / "cyclegen.cfg", spec.cycle.to_text() + spec.tracker.to_text());
  write_text(out / "coverage.txt", spanning_profile_coverage(spec.cycle, 1.0).to_text());
  log << "gen-data: " << train.size() << " training and " << validation.size() << " validation episodes\n";
}

// ------------------------------------------------------------- train-model

inline DeepModelParams initial_model(const std::vector<Episode>& data, const TrainConfig& cfg) {
  DeepModelParams p(fit_io_spec(data, cfg.use_grade), cfg.arch);
  Rng rng = stream_rng(cfg.seed, 0, 0x696e6974ULL);
  p.initialize(rng);
  return p;
}

inline void write_model_curve(const fs::path& path, const std::vector<LearningCurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "epoch,train_form_loss,deploy_form_loss\n";
  for (const auto& pt : curve)
    out << pt.epoch << ',' << format_double(pt.train_form_loss) << ',' << format_double(pt.deploy_form_loss) << "\n";
}

inline TrainResult run_train_model(const std::vector<Episode>& data, const TrainConfig& cfg, const fs::path& out,
                                   std::ostream& log) {
  fs::create_directories(out);
  write_text(out / "train.cfg", cfg.to_text());
  const auto res = train(initial_model(data, cfg), data, cfg, [&](const LearningCurvePoint& pt) {
    if (pt.epoch % 25 == 0 || pt.epoch == cfg.epochs)
      log << "epoch " << pt.epoch << " train_form " << pt.train_form_loss << " deploy_form " << pt.deploy_form_loss
          << std::endl;
  });
  save_deep_model(out / "best.ckpt", res.best);
  save_deep_model(out / "final.ckpt", res.final);
  write_model_curve(out / "learning_curve.csv", res.curve);
  write_text(out / "summary.txt", "best_epoch = " + std::to_string(res.best_epoch) + "\n");
  log << "train-model: best epoch " << res.best_epoch << "\n";
  return res;
}

// ---------------------------------------------------------- validate-model

struct ValidationSpec {
  std::size_t horizon = 400;
  std::size_t trials = 90;
  std::uint64_t seed = 201;
  double v_bound = 1.5;  // per-trial max |v error| threshold reported in the summary
};

struct ValidationSummary {
  long trials = 0;
  long excluded = 0;
  long within_bound = 0;
  double max_abs_mean_v_error = 0.0;
  double max_abs_mean_a_error = 0.0;

  std::string to_text(double bound) const {
    std::ostringstream o;
    o << "trials = " << trials << "\n"
      << "excluded = " << excluded << "\n"
      << "v_bound = " << format_double(bound) << "\n"
      << "trials_within_v_bound = " << within_bound << "\n"
      << "max_abs_mean_v_error = " << format_double(max_abs_mean_v_error) << "\n"
      << "max_abs_mean_a_error = " << format_double(max_abs_mean_a_error) << "\n";
    return o.str();
  }
};

inline ValidationSummary summarize(const ModelValidation& mv, const ValidationSpec& spec) {
  ValidationSummary s;
  s.trials = mv.series.trials;
  s.excluded = mv.series.excluded;
  const auto& v = mv.series.stats[mv.series.channel("v")];
  const auto& a = mv.series.stats[mv.series.channel("a")];
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k].n > 0) s.max_abs_mean_v_error = std::max(s.max_abs_mean_v_error, std::abs(v[k].mean));
    if (a[k].n > 0) s.max_abs_mean_a_error = std::max(s.max_abs_mean_a_error, std::abs(a[k].mean));
  }
  for (double worst : mv.max_abs_v_error)
    if (std::isfinite(worst) && worst < spec.v_bound) ++s.within_bound;
  return s;
}

inline ValidationSummary run_validate_model(const DeepModelParams& p, const std::vector<Episode>& validation,
                                            const ValidationSpec& spec, const fs::path& out, unsigned threads,
                                            std::ostream& log) {
  fs::create_directories(out);
  const ModelValidation mv = model_error_stats(p, validation, spec.horizon, spec.trials, spec.seed, threads);
  mv.series.write_csv(out / "error_stats.csv", p.io().dt);
  write_text(out / "scenario.csv", mv.scenario.to_csv());
  const ValidationSummary s = summarize(mv, spec);
  write_text(out / "summary.txt", s.to_text(spec.v_bound));
  for (const auto& f : mv.failures) log << "validate-model: excluded " << f << "\n";
  log << "validate-model: " << s.within_bound << "/" << s.trials << " trials within " << spec.v_bound
      << " m/s, max |mean v error| " << s.max_abs_mean_v_error << "\n";
  return s;
}

// ------------------------------------------------------------ train-policy

inline PgResult run_train_policy(const DeepModelParams& model, const CaccConfig& env_cfg, const PgConfig& cfg,
                                 const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  write_text(out / "cacc.cfg", env_cfg.to_text());
  write_text(out / "pg.cfg", cfg.to_text());
  const CaccEnv env(env_cfg, model);
  const auto res = train_policy(env, make_policy(env_cfg, cfg), cfg, [&](const PgDiagnostics& d) {
    if (d.iteration % 10 == 0 || d.iteration == 1)
      log << "iteration " << d.iteration << " avg_discounted_return " << d.avg_discounted_return << " crashes "
          << d.crashes << "/" << d.episodes << std::endl;
  });
  save_policy(out / "best.ckpt", res.best, &env_cfg);
  save_policy(out / "final.ckpt", res.final, &env_cfg);
  write_policy_curve(out / "learning_curve.csv", res.curve);
  write_text(out / "summary.txt", "best_iteration = " + std::to_string(res.best_iteration) + "\n");
  log << "train-policy: best iteration " << res.best_iteration << "\n";
  return res;
}

// ------------------------------------------------------------- eval-policy

struct EvalSpec {
  std::size_t trials = 100;
  std::size_t plant_trials = 10;
  std::uint64_t seed = 301;
  double time_gap_settle_s = 15.0;
  double time_gap_tolerance = 0.2;   // s
  double speed_settle_s = 30.0;
  double speed_tolerance = 0.1;      // m/s
  double steady_state_from_s = 60.0;
  bool write_rollouts = true;
};

struct EvalSummary {
  long trials = 0;
  long crashes = 0;
  long settled = 0;  // complete, crash-free and within both tolerances after settling
  double worst_time_gap_error = 0.0;
  double worst_speed_error = 0.0;
  double steady_state_mean_time_gap_error = 0.0;
  double steady_state_mean_speed_error = 0.0;

  std::string to_text() const {
    std::ostringstream o;
    o << "trials = " << trials << "\n"
      << "crashes = " << crashes << "\n"
      << "settled = " << settled << "\n"
      << "worst_time_gap_error_after_settle = " << format_double(worst_time_gap_error) << "\n"
      << "worst_speed_error_after_settle = " << format_double(worst_speed_error) << "\n"
      << "steady_state_mean_time_gap_error = " << format_double(steady_state_mean_time_gap_error) << "\n"
      << "steady_state_mean_speed_error = " << format_double(steady_state_mean_speed_error) << "\n";
    return o.str();
  }
};

inline EvalSummary summarize(const ControlEvaluation& ev, const CaccConfig& cfg, const EvalSpec& spec) {
  EvalSummary s;
  s.trials = static_cast<long>(ev.rollouts.size());
  s.crashes = ev.crashes;
  const auto tg_from = static_cast<std::size_t>(std::lround(spec.time_gap_settle_s / cfg.dt));
  const auto v_from = static_cast<std::size_t>(std::lround(spec.speed_settle_s / cfg.dt));
  const auto horizon = static_cast<std::size_t>(cfg.horizon);
  for (const auto& tr : ev.rollouts) {
    const SettlingCheck c = settling(tr, tg_from, v_from, horizon);
    s.worst_time_gap_error = std::max(s.worst_time_gap_error, c.max_abs_time_gap_error);
    s.worst_speed_error = std::max(s.worst_speed_error, c.max_abs_speed_error);
    if (c.complete && c.max_abs_time_gap_error < spec.time_gap_tolerance && c.max_abs_speed_error < spec.speed_tolerance)
      ++s.settled;
  }
  const auto ss_from = static_cast<std::size_t>(std::lround(spec.steady_state_from_s / cfg.dt));
  const auto& tg = ev.series.stats[ev.series.channel("time_gap_error")];
  const auto& sp = ev.series.stats[ev.series.channel("speed_error")];
  double n = 0.0;
  for (std::size_t k = ss_from; k < tg.size(); ++k) {
    if (tg[k].n == 0) continue;
    s.steady_state_mean_time_gap_error += tg[k].mean;
    s.steady_state_mean_speed_error += sp[k].mean;
    n += 1.0;
  }
  if (n > 0) {
    s.steady_state_mean_time_gap_error /= n;
    s.steady_state_mean_speed_error /= n;
  } else {
    s.steady_state_mean_time_gap_error = std::numeric_limits<double>::quiet_NaN();
    s.steady_state_mean_speed_error = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

inline EvalSummary run_eval_env(const CaccEnv& env, const PolicyParams& policy, std::size_t trials,
                                const EvalSpec& spec, std::uint64_t seed, const fs::path& out, unsigned threads) {
  fs::create_directories(out);
  const ControlEvaluation ev = control_error_stats(env, policy, trials, seed, threads);
  ev.series.write_csv(out / "error_stats.csv", env.config().dt);
  if (spec.write_rollouts)
    for (std::size_t i = 0; i < ev.rollouts.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "rollout_%03zu.csv", i);
      write_trajectory(out / name, ev.rollouts[i], env.config().grade_mode);
    }
  const EvalSummary s = summarize(ev, env.config(), spec);
  write_text(out / "summary.txt", s.to_text());
  return s;
}

struct EvalResult {
  EvalSummary deep;
  std::optional<EvalSummary> plant;
};

/// Deterministic rollouts in the deep-model environment and, when a plant is
/// given, zero-shot on the surrogate plant.
inline EvalResult run_eval_policy(const PolicyParams& policy, const DeepModelParams* model,
                                  const std::optional<PlantConfig>& plant, const CaccConfig& env_cfg,
                                  const EvalSpec& spec, const fs::path& out, unsigned threads, std::ostream& log) {
  fs::create_directories(out);
  write_text(out / "cacc.cfg", env_cfg.to_text());
  EvalResult r;
  if (model) {
    const CaccEnv env(env_cfg, *model);
    r.deep = run_eval_env(env, policy, spec.trials, spec, spec.seed, out / "deep", threads);
    log << "eval-policy (deep): crashes " << r.deep.crashes << ", settled " << r.deep.settled << "/"
        << r.deep.trials << "\n";
  }
  if (plant && spec.plant_trials > 0) {
    const CaccEnv env(env_cfg, *plant);
    r.plant = run_eval_env(env, policy, spec.plant_trials, spec, spec.seed + 1, out / "plant", threads);
    log << "eval-policy (plant): crashes " << r.plant->crashes << ", steady-state mean time-gap error "
        << r.plant->steady_state_mean_time_gap_error << " s\n";
  }
  return r;
}

// ---------------------------------------------------------------- stamping

/// Writes resolved.cfg, seeds.txt and git_describe.txt, then checksums.sha256
/// over every file in `dir` except logs/ and the checksum file itself.
inline void stamp_directory(const fs::path& dir, const std::string& resolved, const std::string& seeds,
                            const fs::path& source_dir = {}) {
  fs::create_directories(dir);
  write_text(dir / "resolved.cfg", resolved);
  write_text(dir / "seeds.txt", seeds);
  write_text(dir / "git_describe.txt", git_describe(source_dir) + "\n");
  write_text(dir / "checksums.sha256", checksum_manifest(dir, {"logs"}, {"checksums.sha256"}));
}

// ---------------------------------------------------------------- manifest

inline const std::vector<std::string>& known_stages() {
  static const std::vector<std::string> s{"gen-data", "train-model", "validate-model", "train-policy", "eval-policy"};
  return s;
}

/// A parsed manifest. Paths in it are relative to the manifest's directory.
///
///   [run]
///   seed = 1
///   stages = gen-data, train-model, validate-model, train-policy, eval-policy
///
///   [gen-data]          hours, validation_hours, plant_config, cyclegen_config, <cyclegen keys>
///   [train-model]       config, data (when gen-data is not a stage), <train keys>
///   [validate-model]    horizon, trials, model (when train-model is not a stage)
///   [env]               config, <cacc keys>
///   [train-policy]      config, model (when train-model is not a stage), <pg keys>
///   [eval-policy]       trials, plant_trials, policy, checkpoint = best | final
struct Manifest {
  fs::path base_dir;
  Config raw;
  std::uint64_t seed = 1;
  std::vector<std::string> stages;

  static Manifest parse(const Config& c, const fs::path& base_dir) {
    Manifest m;
    m.base_dir = base_dir;
    m.raw = c;
    m.seed = static_cast<std::uint64_t>(c.get_int("run.seed", 1));
    const std::string stages = c.get_string("run.stages", "");
    if (trim(stages).empty()) throw Error(ErrorKind::Parse, "manifest: run.stages is empty");
    for (const auto& s : split(stages, ',')) {
      if (std::find(known_stages().begin(), known_stages().end(), s) == known_stages().end())
        throw Error(ErrorKind::Parse, "manifest: unknown stage '" + s + "'");
      m.stages.push_back(s);
    }
    return m;
  }

  static Manifest load(const fs::path& path) {
    return parse(Config::load(path.string()), fs::absolute(path).parent_path());
  }

  bool has_stage(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : base_dir / q;
  }

  /// Section keys layered over an optional config file named by `file_key`.
  Config section(const std::string& name, const std::string& file_key = "config") const {
    Config sec = raw.subsection(name);
    Config out;
    if (sec.has(file_key)) out = Config::load(resolve(sec.require_string(file_key)).string());
    out.merge(sec);
    return out;
  }
};

struct ResolvedRun {
  DataSpec data;
  TrainConfig train;
  ValidationSpec validation;
  CaccConfig env;
  PgConfig pg;
  EvalSpec eval;
  std::optional<fs::path> data_dir;
  std::optional<fs::path> model_path;
  std::optional<fs::path> policy_path;
  std::string policy_checkpoint = "final";
  unsigned threads = 1;

  std::string seeds_text() const {
    std::ostringstream o;
    o << "cyclegen.seed = " << data.cycle.seed << "\n"
      << "validation_data.seed = " << data.validation_seed << "\n"
      << "train.seed = " << train.seed << "\n"
      << "train.split_seed = " << train.split_seed << "\n"
      << "validate.seed = " << validation.seed << "\n"
      << "pg.seed = " << pg.seed << "\n"
      << "eval.seed = " << eval.seed << "\n";
    return o.str();
  }
};

/// Builds every stage's configuration and checks that each input not produced
/// by an earlier stage exists. Nothing is run.
inline ResolvedRun resolve_manifest(const Manifest& m, unsigned threads) {
  ResolvedRun r;
  r.threads = threads;
  auto missing = [](const std::string& what, const fs::path& p) {
    return Error(ErrorKind::Resolution, "manifest: " + what + " '" + p.string() + "' does not exist");
  };
  auto check_file = [&](const Config& sec, const std::string& key, const std::string& what) {
    if (sec.has(key) && !fs::exists(m.resolve(sec.require_string(key))))
      throw missing(what, m.resolve(sec.require_string(key)));
  };
  for (const auto& [name, key] : std::vector<std::pair<std::string, std::string>>{
           {"gen-data", "plant_config"}, {"gen-data", "cyclegen_config"}, {"train-model", "config"},
           {"train-policy", "config"}, {"env", "config"}}) {
    check_file(m.raw.subsection(name), key, name + "." + key);
  }

  // gen-data
  {
    const Config sec = m.raw.subsection("gen-data");
    Config cyc = m.section("gen-data", "cyclegen_config");
    if (!cyc.has("seed")) cyc.set("seed", std::to_string(m.seed));
    r.data.cycle = CycleGenConfig::from_config(cyc);
    r.data.tracker = SpeedTracker::from_config(cyc);
    r.data.plant = sec.has("plant_config") ? PlantConfig::load(m.resolve(sec.require_string("plant_config")).string())
                                           : PlantConfig{};
    r.data.hours = sec.get_double("hours", r.data.hours);
    r.data.validation_hours = sec.get_double("validation_hours", r.data.validation_hours);
    r.data.validation_seed =
        static_cast<std::uint64_t>(sec.get_int("validation_seed", static_cast<long long>(m.seed + 100)));
    if (!(r.data.hours > 0.0) || !(r.data.validation_hours > 0.0))
      throw Error(ErrorKind::InvalidInput, "manifest: data hours must be positive");
  }
  // train-model
  {
    Config sec = m.section("train-model");
    if (!sec.has("seed")) sec.set("seed", std::to_string(m.seed));
    r.train = TrainConfig::from_config(sec);
    const bool needs_data = m.has_stage("train-model") || m.has_stage("validate-model");
    if (needs_data && !m.has_stage("gen-data")) {
      const std::string d = m.raw.get_string("train-model.data", m.raw.get_string("validate-model.data", ""));
      if (d.empty()) throw Error(ErrorKind::Resolution, "manifest: no gen-data stage and no data directory given");
      r.data_dir = m.resolve(d);
      if (!fs::is_directory(*r.data_dir)) throw missing("data directory", *r.data_dir);
    }
  }
  // validate-model
  {
    const Config sec = m.raw.subsection("validate-model");
    r.validation.horizon = static_cast<std::size_t>(sec.get_int("horizon", static_cast<long long>(r.validation.horizon)));
    r.validation.trials = static_cast<std::size_t>(sec.get_int("trials", static_cast<long long>(r.validation.trials)));
    r.validation.seed = static_cast<std::uint64_t>(sec.get_int("seed", static_cast<long long>(m.seed + 200)));
    r.validation.v_bound = sec.get_double("v_bound", r.validation.v_bound);
  }
  // model checkpoint for stages downstream of train-model
  if (!m.has_stage("train-model") &&
      (m.has_stage("validate-model") || m.has_stage("train-policy") || m.has_stage("eval-policy"))) {
    std::string p;
    for (const char* s : {"validate-model.model", "train-policy.model", "eval-policy.model"})
      if (p.empty()) p = m.raw.get_string(s, "");
    if (p.empty()) throw Error(ErrorKind::Resolution, "manifest: no train-model stage and no model checkpoint given");
    r.model_path = m.resolve(p);
    if (!fs::exists(*r.model_path)) throw missing("model checkpoint", *r.model_path);
  }
  // environment and pg
  {
    r.env = CaccConfig::from_config(m.section("env"));
    Config pg = m.section("train-policy");
    if (!pg.has("seed")) pg.set("seed", std::to_string(m.seed));
    r.pg = PgConfig::from_config(pg);
    r.pg.threads = threads;
    r.pg.validate(r.env.horizon);
  }
  // eval-policy
  {
    const Config sec = m.raw.subsection("eval-policy");
    r.eval.trials = static_cast<std::size_t>(sec.get_int("trials", static_cast<long long>(r.eval.trials)));
    r.eval.plant_trials =
        static_cast<std::size_t>(sec.get_int("plant_trials", static_cast<long long>(r.eval.plant_trials)));
    r.eval.seed = static_cast<std::uint64_t>(sec.get_int("seed", static_cast<long long>(m.seed + 300)));
    r.eval.time_gap_settle_s = sec.get_double("time_gap_settle_s", r.eval.time_gap_settle_s);
    r.eval.time_gap_tolerance = sec.get_double("time_gap_tolerance", r.eval.time_gap_tolerance);
    r.eval.speed_settle_s = sec.get_double("speed_settle_s", r.eval.speed_settle_s);
    r.eval.speed_tolerance = sec.get_double("speed_tolerance", r.eval.speed_tolerance);
    r.eval.steady_state_from_s = sec.get_double("steady_state_from_s", r.eval.steady_state_from_s);
    r.eval.write_rollouts = sec.get_bool("write_rollouts", r.eval.write_rollouts);
    r.policy_checkpoint = sec.get_string("checkpoint", r.policy_checkpoint);
    if (r.policy_checkpoint != "best" && r.policy_checkpoint != "final")
      throw Error(ErrorKind::InvalidInput, "manifest: eval-policy.checkpoint must be 'best' or 'final'");
    if (m.has_stage("eval-policy") && !m.has_stage("train-policy")) {
      const std::string p = sec.get_string("policy", "");
      if (p.empty()) throw Error(ErrorKind::Resolution, "manifest: no train-policy stage and no policy checkpoint given");
      r.policy_path = m.resolve(p);
      if (!fs::exists(*r.policy_path)) throw missing("policy checkpoint", *r.policy_path);
    }
  }
  return r;
}

inline std::string resolved_text(const Manifest& m, const ResolvedRun& r) {
  std::ostringstream o;
  o << "[run]\nseed = " << m.seed << "\nstages = ";
  for (std::size_t i = 0; i < m.stages.size(); ++i) o << (i ? ", " : "") << m.stages[i];
  o << "\n";
  o << "\n[gen-data]\nhours = " << format_double(r.data.hours)
    << "\nvalidation_hours = " << format_double(r.data.validation_hours)
    << "\nvalidation_seed = " << r.data.validation_seed << "\n"
    << r.data.cycle.to_text() << r.data.tracker.to_text();
  o << "\n[plant]\n" << r.data.plant.to_text();
  o << "\n[train-model]\n" << r.train.to_text();
  o << "\n[validate-model]\nhorizon = " << r.validation.horizon << "\ntrials = " << r.validation.trials
    << "\nseed = " << r.validation.seed << "\nv_bound = " << format_double(r.validation.v_bound) << "\n";
  o << "\n[env]\n" << r.env.to_text();
  o << "\n[train-policy]\n" << r.pg.to_text();
  o << "\n[eval-policy]\ntrials = " << r.eval.trials << "\nplant_trials = " << r.eval.plant_trials
    << "\nseed = " << r.eval.seed << "\ncheckpoint = " << r.policy_checkpoint
    << "\ntime_gap_settle_s = " << format_double(r.eval.time_gap_settle_s)
    << "\ntime_gap_tolerance = " << format_double(r.eval.time_gap_tolerance)
    << "\nspeed_settle_s = " << format_double(r.eval.speed_settle_s)
    << "\nspeed_tolerance = " << format_double(r.eval.speed_tolerance)
    << "\nsteady_state_from_s = " << format_double(r.eval.steady_state_from_s) << "\n";
  if (r.data_dir) o << "\n# input data = " << r.data_dir->string() << "\n";
  if (r.model_path) o << "# input model = " << r.model_path->string() << "\n";
  if (r.policy_path) o << "# input policy = " << r.policy_path->string() << "\n";
  return o.str();
}

struct RunReport {
  std::optional<TrainResult> model;
  std::optional<ValidationSummary> validation;
  std::optional<PgResult> policy;
  std::optional<EvalResult> eval;
  fs::path out;
};

/// Runs the manifest's stages in pipeline order into `out`. Resolution errors
/// are raised before any stage starts; a failing stage is reported with its
/// name and log path.
inline RunReport run_experiment(const Manifest& m, const fs::path& out, unsigned threads = 1,
                                std::ostream* echo = nullptr, const fs::path& source_dir = {}) {
  const ResolvedRun r = resolve_manifest(m, threads);
  fs::create_directories(out / "logs");
  RunReport rep;
  rep.out = out;

  std::vector<Episode> train_eps, val_eps;
  std::optional<DeepModelParams> model;
  std::optional<PolicyParams> policy;

  auto load_data = [&] {
    if (!train_eps.empty()) return;
    const fs::path dir = r.data_dir ? *r.data_dir : out / "data";
    train_eps = read_episode_dir(dir / "train");
    val_eps = read_episode_dir(dir / "validation");
  };
  auto get_model = [&]() -> const DeepModelParams& {
    if (!model) model = load_deep_model(r.model_path ? *r.model_path : out / "model" / "best.ckpt");
    return *model;
  };

  for (const std::string& stage : known_stages()) {
    if (!m.has_stage(stage)) continue;
    const fs::path log_path = out / "logs" / (stage + ".log");
    std::ofstream log_file(log_path);
    std::ostream& log = log_file;
    try {
      if (stage == "gen-data") {
        run_gen_data(r.data, out / "data", log);
      } else if (stage == "train-model") {
        load_data();
        rep.model = run_train_model(train_eps, r.train, out / "model", log);
        model = rep.model->best;
      } else if (stage == "validate-model") {
        load_data();
        rep.validation = run_validate_model(get_model(), val_eps, r.validation, out / "validation", threads, log);
      } else if (stage == "train-policy") {
        rep.policy = run_train_policy(get_model(), r.env, r.pg, out / "policy", log);
        policy = r.policy_checkpoint == "best" ? rep.policy->best : rep.policy->final;
      } else if (stage == "eval-policy") {
        if (!policy) policy = load_policy(*r.policy_path);
        rep.eval = run_eval_policy(*policy, &get_model(), r.data.plant, r.env, r.eval, out / "eval", threads, log);
      }
    } catch (const std::exception& e) {
      log << "error: " << e.what() << "\n";
      throw Error(ErrorKind::Stage,
                  "stage '" + stage + "' failed: " + e.what() + " (log: " + log_path.string() + ")");
    }
    if (echo) *echo << "stage " << stage << " done (log: " << log_path.string() << ")" << std::endl;
  }
  stamp_directory(out, resolved_text(m, r), r.seeds_text(), source_dir);
  return rep;
}

}  // namespace deeptruck
