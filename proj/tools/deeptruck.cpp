// deeptruck command-line interface.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "deeptruck/experiment.hpp"

namespace fs = std::filesystem;
using namespace deeptruck;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  fs::path out = "out";
};

Config load_optional(const std::string& path) { return path.empty() ? Config{} : Config::load(path); }

void set_seed(Config& c, const Globals& g, const std::string& key = "seed") {
  if (g.seed) c.set(key, std::to_string(*g.seed));
}

std::string seed_line(const std::string& key, std::uint64_t seed) { return key + " = " + std::to_string(seed) + "\n"; }

std::vector<Episode> load_episodes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "episode directory '" + dir.string() + "' does not exist");
  auto eps = read_episode_dir(dir);
  if (eps.empty()) throw Error(ErrorKind::InvalidInput, "no episodes in '" + dir.string() + "'");
  return eps;
}

/// Episodes from `dir`, or from dir/<sub> when that exists.
std::vector<Episode> load_episodes(const fs::path& dir, const std::string& sub) {
  return load_episodes(fs::is_directory(dir / sub) ? dir / sub : dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep replica models of truck longitudinal dynamics and CACC policy training"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding every stage seed");
  app.add_option("--threads", g.threads, "Worker threads for rollouts and statistics (results do not depend on it)")
      ->check(CLI::Range(1u, 256u));
  app.add_option("--out", g.out, "Output directory");

  // gen-cycle
  auto* gen = app.add_subcommand("gen-cycle", "Generate training and validation driving-cycle episodes");
  double hours = 4.0, validation_hours = 1.0;
  std::string cyc_cfg, plant_cfg;
  gen->add_option("--hours", hours, "Hours of training data")->check(CLI::PositiveNumber);
  gen->add_option("--validation-hours", validation_hours, "Hours of held-out data")->check(CLI::PositiveNumber);
  gen->add_option("--config", cyc_cfg, "Cycle generator config")->check(CLI::ExistingFile);
  gen->add_option("--plant", plant_cfg, "Plant config")->check(CLI::ExistingFile);

  // train-model
  auto* tm = app.add_subcommand("train-model", "Train a deep replica model");
  std::string data_dir, train_cfg;
  tm->add_option("--data", data_dir, "Episode directory (or a gen-cycle output directory)")->required();
  tm->add_option("--config", train_cfg, "Training config")->check(CLI::ExistingFile);

  // validate-model
  auto* vm = app.add_subcommand("validate-model", "Open-loop error statistics of a model on held-out episodes");
  std::string model_path, val_dir;
  std::size_t horizon = 400, trials = 90;
  vm->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  vm->add_option("--data", val_dir, "Validation episode directory (or a gen-cycle output directory)")->required();
  vm->add_option("--horizon", horizon, "Steps per trial");
  vm->add_option("--trials", trials, "Number of trials");

  // train-policy
  auto* tp = app.add_subcommand("train-policy", "Train a CACC policy in the deep-model environment");
  std::string pg_cfg, env_cfg;
  tp->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  tp->add_option("--config", pg_cfg, "Policy-gradient config")->check(CLI::ExistingFile);
  tp->add_option("--env", env_cfg, "Environment config")->check(CLI::ExistingFile);

  // eval-policy
  auto* ep = app.add_subcommand("eval-policy", "Deterministic evaluation rollouts of a policy");
  std::string policy_path, eval_plant_cfg;
  std::size_t eval_trials = 100, plant_trials = 10;
  bool on_plant = false;
  ep->add_option("--policy", policy_path, "Policy checkpoint")->required()->check(CLI::ExistingFile);
  ep->add_option("--model", model_path, "Model checkpoint for the deep environment")->check(CLI::ExistingFile);
  ep->add_option("--env", env_cfg, "Environment config")->check(CLI::ExistingFile);
  ep->add_option("--trials", eval_trials, "Rollouts in the deep environment");
  ep->add_flag("--plant-eval", on_plant, "Also evaluate zero-shot on the surrogate plant");
  ep->add_option("--plant", eval_plant_cfg, "Plant config for --plant-eval")->check(CLI::ExistingFile);
  ep->add_option("--plant-trials", plant_trials, "Rollouts on the surrogate plant");

  // run
  auto* run = app.add_subcommand("run", "Run every stage listed in a manifest");
  std::string manifest_path;
  run->add_option("manifest", manifest_path, "Manifest file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*gen) {
      Config c = load_optional(cyc_cfg);
      set_seed(c, g);
      DataSpec spec;
      spec.cycle = CycleGenConfig::from_config(c);
      spec.tracker = SpeedTracker::from_config(c);
      spec.plant = plant_cfg.empty() ? PlantConfig{} : PlantConfig::load(plant_cfg);
      spec.hours = hours;
      spec.validation_hours = validation_hours;
      spec.validation_seed = spec.cycle.seed + 100;
      run_gen_data(spec, g.out, std::cout);
      stamp_directory(g.out,
                      "[gen-data]\nhours = " + format_double(hours) + "\nvalidation_hours = " +
                          format_double(validation_hours) + "\n" + spec.cycle.to_text() + spec.tracker.to_text() +
                          "\n[plant]\n" + spec.plant.to_text(),
                      seed_line("cyclegen.seed", spec.cycle.seed) + seed_line("validation_data.seed", spec.validation_seed));
    } else if (*tm) {
      Config c = load_optional(train_cfg);
      set_seed(c, g);
      const TrainConfig cfg = TrainConfig::from_config(c);
      const auto eps = load_episodes(data_dir, "train");
      run_train_model(eps, cfg, g.out, std::cout);
      stamp_directory(g.out, "[train-model]\ndata = " + data_dir + "\n" + cfg.to_text(),
                      seed_line("train.seed", cfg.seed) + seed_line("train.split_seed", cfg.split_seed));
    } else if (*vm) {
      const DeepModelParams p = load_deep_model(model_path);
      const auto eps = load_episodes(val_dir, "validation");
      ValidationSpec spec;
      spec.horizon = horizon;
      spec.trials = trials;
      if (g.seed) spec.seed = *g.seed;
      run_validate_model(p, eps, spec, g.out, g.threads, std::cout);
      stamp_directory(g.out,
                      "[validate-model]\nmodel = " + model_path + "\ndata = " + val_dir + "\nhorizon = " +
                          std::to_string(horizon) + "\ntrials = " + std::to_string(trials) + "\n",
                      seed_line("validate.seed", spec.seed));
    } else if (*tp) {
      const DeepModelParams p = load_deep_model(model_path);
      const CaccConfig env = CaccConfig::from_config(load_optional(env_cfg));
      Config c = load_optional(pg_cfg);
      set_seed(c, g);
      PgConfig cfg = PgConfig::from_config(c);
      cfg.threads = g.threads;
      // --out may name the policy checkpoint itself; artifacts then go next to it.
      fs::path dir = g.out;
      std::optional<fs::path> ckpt;
      if (g.out.extension() == ".ckpt") {
        ckpt = g.out;
        dir = g.out.has_parent_path() ? g.out.parent_path() : fs::path(".");
      }
      const PgResult res = run_train_policy(p, env, cfg, dir, std::cout);
      if (ckpt) save_policy(*ckpt, res.final, &env);
      stamp_directory(dir, "[train-policy]\nmodel = " + model_path + "\n" + cfg.to_text() + "\n[env]\n" + env.to_text(),
                      seed_line("pg.seed", cfg.seed));
    } else if (*ep) {
      const PolicyParams pol = load_policy(policy_path);
      const CaccConfig env = CaccConfig::from_config(load_optional(env_cfg));
      std::optional<DeepModelParams> model;
      if (!model_path.empty()) model = load_deep_model(model_path);
      std::optional<PlantConfig> plant;
      if (on_plant) plant = eval_plant_cfg.empty() ? PlantConfig{} : PlantConfig::load(eval_plant_cfg);
      if (!model && !plant) throw Error(ErrorKind::InvalidInput, "eval-policy needs --model and/or --plant-eval");
      EvalSpec spec;
      spec.trials = eval_trials;
      spec.plant_trials = plant_trials;
      if (g.seed) spec.seed = *g.seed;
      const EvalResult r = run_eval_policy(pol, model ? &*model : nullptr, plant, env, spec, g.out, g.threads, std::cout);
      if (model) std::cout << "deep environment:\n" << r.deep.to_text();
      if (r.plant) std::cout << "surrogate plant:\n" << r.plant->to_text();
      stamp_directory(g.out, "[eval-policy]\npolicy = " + policy_path + "\nmodel = " + model_path + "\n\n[env]\n" + env.to_text(),
                      seed_line("eval.seed", spec.seed));
    } else if (*run) {
      Manifest m = Manifest::load(manifest_path);
      if (g.seed) {
        m.seed = *g.seed;
        m.raw.set("run.seed", std::to_string(*g.seed));
      }
      run_experiment(m, g.out, g.threads, &std::cout);
      std::cout << "artifacts in " << g.out.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "deeptruck: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
