#include <charconv>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedrep/experiment.hpp"

namespace {

// Precedence: command-line flag, then FEDREP_* environment variable, then the
// config file value.
void apply_overrides(fedrep::ExperimentConfig& cfg, bool seed_set,
                     std::uint64_t seed, bool out_set, const std::string& out) {
  fedrep::apply_env_overrides(cfg);
  if (seed_set) cfg.seed = seed;
  if (out_set) cfg.out_dir = out;
}

int cmd_run(const std::string& config_path, bool seed_set, std::uint64_t seed,
            bool out_set, const std::string& out, int threads_override) {
  fedrep::ExperimentConfig cfg = fedrep::load_config(config_path);
  apply_overrides(cfg, seed_set, seed, out_set, out);
  if (threads_override > 0) cfg.threads = threads_override;
  fedrep::validate_config(cfg);

  const fedrep::ExperimentResult res = fedrep::run_experiment(cfg);
  fedrep::write_experiment_outputs(cfg, res);

  double mean_mse = 0.0;
  for (double m : res.final_mse) mean_mse += m / res.final_mse.size();
  std::cout << "wrote " << cfg.out_dir << "/metrics.csv (" << res.rows.size()
            << " rows), summary.json, state.json\n"
            << "final value MSE, mean over " << cfg.n_agents
            << " agents: " << fedrep::format_double(mean_mse) << "\n";
  if (res.have_reference && !res.reference_converged)
    std::cout << "note: reference run still moved the features by "
              << fedrep::format_double(res.reference_final_step)
              << " in its last round; lyapunov column uses it anyway\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<int>& agents,
              double threshold, bool seed_set, std::uint64_t seed, bool out_set,
              const std::string& out) {
  fedrep::ExperimentConfig cfg = fedrep::load_config(config_path);
  apply_overrides(cfg, seed_set, seed, out_set, out);
  for (int n : agents)
    if (n < 1) throw fedrep::ConfigError("sweep: agent counts must be >= 1");
  if (!(threshold > 0.0))
    throw fedrep::ConfigError("sweep: threshold must be > 0");

  const auto table = fedrep::sweep_agents(cfg, agents, threshold);
  fedrep::write_sweep_outputs(cfg, table);
  std::cout << fedrep::sweep_table_csv(table);
  std::cout << "wrote " << cfg.out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_check() {
  using namespace fedrep;
  int failures = 0;
  auto report = [&](bool ok, const std::string& line) {
    std::cout << (ok ? "[ ok ] " : "[FAIL] ") << line << "\n";
    failures += ok ? 0 : 1;
  };

  {
    RandomStream rng(12345);
    const GradientCheckReport g = gradient_check(200, rng);
    report(g.failures == 0,
           "analytic update maps match finite differences (max rel err g " +
               format_double(g.max_rel_error_g) + ", h " +
               format_double(g.max_rel_error_h) + " over " +
               std::to_string(g.samples_tested) + " samples)");
  }
  {
    RandomStream rng(777);
    const LipschitzReport l = lipschitz_check(0.9, 10.0, 20000, rng);
    report(l.violations == 0,
           "sampled update maps stay within the smoothness bounds (g " +
               format_double(l.max_ratio_g) + " <= " +
               format_double(l.bound_g) + ", h " + format_double(l.max_ratio_h) +
               " <= " + format_double(l.bound_h) + ")");
  }
  {
    RandomStream rng(7);
    const Mdp garnet = build_garnet(GarnetSpec{}, rng);
    const Policy pi = uniform_policy(garnet.n_states(), garnet.n_actions());
    const Matrix P = transition_under_policy(garnet, pi);
    const Vector mu = stationary_distribution(P);
    bool ok = false;
    std::string detail;
    try {
      const MixingProfile prof = tv_mixing_profile(P, mu);
      ok = prof.fitted_rho < 1.0 && prof.tau_delta >= 1;
      detail = "rho " + format_double(prof.fitted_rho) + ", tau(" +
               format_double(prof.delta) + ") " +
               std::to_string(prof.tau_delta);
    } catch (const MixingFailure& e) {
      detail = e.what();
    }
    report(ok, "benchmark chain mixes geometrically (" + detail + ")");
  }
  {
    RandomStream rng(99);
    const Mdp garnet = [&] {
      RandomStream g(7);
      return build_garnet(GarnetSpec{}, g);
    }();
    const Policy pi = uniform_policy(garnet.n_states(), garnet.n_actions());
    const Matrix phi = init_features(garnet.n_states(), 4, rng);
    bool ok = false;
    std::string detail;
    try {
      const FixedPointSolution sol = td_fixed_point(garnet, pi, phi);
      ok = sol.residual_norm <= 1e-8;
      detail = "residual " + format_double(sol.residual_norm);
    } catch (const RankDeficientFeatures& e) {
      detail = e.what();
    }
    report(ok, "weight fixed point zeroes the expected update (" + detail + ")");
  }

  if (failures == 0) {
    std::cout << "all checks passed\n";
    return 0;
  }
  std::cout << failures << " check(s) failed\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated temporal-difference training with a shared "
               "linear representation"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads_override = 0;
  std::vector<int> agents;
  double threshold = 0.0;

  CLI::App* run = app.add_subcommand("run", "train one configuration");
  run->add_option("--config", config_path, "experiment config file")
      ->required();
  CLI::Option* run_seed = run->add_option("--seed", seed, "master seed");
  CLI::Option* run_out = run->add_option("--out", out_dir, "output directory");
  run->add_option("--threads", threads_override, "worker thread count");

  CLI::App* sweep =
      app.add_subcommand("sweep", "rounds-to-threshold across agent counts");
  sweep->add_option("--config", config_path, "experiment config file")
      ->required();
  sweep->add_option("--agents", agents, "comma-separated agent counts")
      ->delimiter(',')
      ->required();
  sweep->add_option("--threshold", threshold,
                    "aggregate tracking-error threshold")
      ->required();
  CLI::Option* sweep_seed = sweep->add_option("--seed", seed, "base seed");
  CLI::Option* sweep_out =
      sweep->add_option("--out", out_dir, "output directory");

  app.add_subcommand("check", "run the built-in numerical diagnostics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("run"))
      return cmd_run(config_path, run_seed->count() > 0, seed,
                     run_out->count() > 0, out_dir, threads_override);
    if (app.got_subcommand("sweep"))
      return cmd_sweep(config_path, agents, threshold,
                       sweep_seed->count() > 0, seed, sweep_out->count() > 0,
                       out_dir);
    if (app.got_subcommand("check")) return cmd_check();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
