#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedrep/analysis.hpp"
#include "fedrep/config.hpp"
#include "fedrep/envs.hpp"
#include "fedrep/federation.hpp"
#include "fedrep/metrics.hpp"
#include "fedrep/serialization.hpp"

namespace fedrep {

// Stream id for drawing the initial feature matrix. Far above any plausible
// agent index so it never collides with an agent's stream.
inline constexpr std::uint64_t kFeatureStreamId = 1ull << 62;

// Everything run_experiment needs about the environment: one MDP and policy
// per agent plus the exact value function and stationary weights used as the
// evaluation oracle.
struct EnvBundle {
  std::vector<Mdp> mdps;
  std::vector<Policy> policies;
  std::vector<Vector> v_exact;
  std::vector<Vector> mu;
  int start_state = 0;
  int episode_marker = -1;  // entering this state completes an episode
  int n_states = 0;
};

inline EnvBundle build_env(const ExperimentConfig& cfg) {
  EnvBundle env;
  const int N = cfg.n_agents;

  if (cfg.env == "cliffwalking") {
    CliffWalkingSpec spec;
    spec.gamma = cfg.gamma;
    spec.slip_prob = cfg.cliff_slip_prob;
    const CliffWalking cw = build_cliffwalking(spec);
    env.start_state = cw.start;
    env.episode_marker = cw.goal;
    std::vector<double> eps = cfg.cliff_policy_eps;
    if (eps.empty()) eps.assign(N, 0.1);
    for (int i = 0; i < N; ++i) {
      env.mdps.push_back(cw.mdp);
      env.policies.push_back(cliff_eps_soft_policy(spec, eps[i]));
    }
  } else if (cfg.env == "garnet") {
    GarnetSpec spec;
    spec.n_states = cfg.garnet_states;
    spec.n_actions = cfg.garnet_actions;
    spec.branching = cfg.garnet_branching;
    spec.reward_scale = cfg.garnet_reward_scale;
    spec.gamma = cfg.gamma;
    RandomStream garnet_rng(cfg.garnet_seed);
    const Mdp base = build_garnet(spec, garnet_rng);
    for (int i = 0; i < N; ++i) {
      env.mdps.push_back(base);
      env.policies.push_back(uniform_policy(spec.n_states, spec.n_actions));
    }
  } else {  // mdp-file
    Mdp base = load_mdp(cfg.mdp_file);
    base.gamma = cfg.gamma;
    for (int i = 0; i < N; ++i) {
      env.mdps.push_back(base);
      env.policies.push_back(uniform_policy(base.n_states(), base.n_actions()));
    }
  }

  // Optional per-agent kernel heterogeneity. Streams derive from the env
  // seed, not the run seed, so seed sweeps face the same family of MDPs.
  if (cfg.kernel_noise > 0.0) {
    for (int i = 0; i < N; ++i) {
      RandomStream s = derive_stream(cfg.garnet_seed,
                                     (1ull << 32) + static_cast<std::uint64_t>(i));
      env.mdps[i] = perturb_kernel(env.mdps[i], cfg.kernel_noise, s);
    }
  }

  // Evaluation oracle. For policy evaluation the target is the value of the
  // fixed behavior policy; for the control variant it is the optimal value,
  // while the stationary weights still come from the uniform chain (the
  // behavior policy changes during training, so no single behavior chain
  // exists to weight by).
  const bool control = cfg.variant == "pfedq-rep";
  for (int i = 0; i < N; ++i) {
    if (control)
      env.v_exact.push_back(optimal_q_value(env.mdps[i]).rowwise().maxCoeff());
    else
      env.v_exact.push_back(exact_value(env.mdps[i], env.policies[i]));
    env.mu.push_back(stationary_distribution(
        transition_under_policy(env.mdps[i], env.policies[i])));
  }
  env.n_states = env.mdps[0].n_states();
  return env;
}

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<double> initial_mse;         // per agent, theta = 0 baseline
  std::vector<double> final_mse;           // per agent
  std::vector<long> episodes_to_threshold; // per agent, -1 = never sustained
  FederationState final_state;
  bool have_reference = false;
  bool reference_converged = false;
  double reference_final_step = 0.0;
};

// First episode count at which the agent's value error has dropped below
// `threshold` and then stays below it until at least `patience` further
// episodes have elapsed. Rows must be one agent's records in round order.
// Returns -1 when no recorded stretch qualifies.
inline long episodes_to_threshold(const std::vector<MetricsRow>& rows,
                                  double threshold, long patience) {
  const std::size_t n = rows.size();
  for (std::size_t j = 0; j < n; ++j) {
    if (!(rows[j].value_mse < threshold)) continue;
    const long target = rows[j].episodes_elapsed + patience;
    bool below = true, confirmed = false;
    for (std::size_t k = j; k < n; ++k) {
      if (!(rows[k].value_mse < threshold)) {
        below = false;
        break;
      }
      if (rows[k].episodes_elapsed >= target) {
        confirmed = true;
        break;
      }
    }
    if (below && confirmed) return rows[j].episodes_elapsed;
  }
  return -1;
}

inline std::vector<MetricsRow> agent_rows(const std::vector<MetricsRow>& rows,
                                          int agent_id) {
  std::vector<MetricsRow> out;
  for (const auto& r : rows)
    if (r.agent_id == agent_id) out.push_back(r);
  return out;
}

// Runs one training job and collects metrics in memory; no files are touched.
// A snapshot is recorded at round 0 and after every `record_every`-th round
// (the final round always included). Column conventions:
//   value_mse       stationary-weighted squared value error vs the oracle
//   tracking_error  ||theta_i - y_i(Phi)||^2 against the current features
//   lyapunov        ||Phi - Phi*||_F^2 + (beta_{r-1}/alpha_r) * tracking,
//                   0 unless reference_rounds > 0
//   phi_drift       Frobenius distance from the previous recorded snapshot
//   alpha_t,beta_t  the step-size schedule evaluated at the row's round
// The aggregate row (agent_id = -1) averages the per-agent columns except
// episodes_elapsed, which it sums.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const EnvBundle env = build_env(cfg);
  const int N = cfg.n_agents;
  const Variant variant = parse_variant(cfg.variant);
  const Schedule schedule = cfg.schedule();

  // The control variant learns Q(s,a), so its feature matrix carries one row
  // per state-action pair rather than per state.
  const int n_actions = env.mdps[0].n_actions();
  const int phi_rows = variant == Variant::PFedQRep ? env.n_states * n_actions
                                                    : env.n_states;
  RandomStream feat_rng = derive_stream(cfg.seed, kFeatureStreamId);
  const Matrix phi0 = init_features(phi_rows, cfg.feature_dim, feat_rng);

  RoundOptions opt;
  opt.K = cfg.local_steps;
  opt.B = cfg.weight_bound;
  opt.epsilon_greedy = cfg.epsilon_greedy;
  opt.aggregation = cfg.aggregation();
  opt.projection = cfg.projection();
  opt.threads = cfg.threads;
  opt.episode_marker = env.episode_marker;

  ExperimentResult res;
  res.have_reference = cfg.reference_rounds > 0;
  if (res.have_reference && variant == Variant::PFedQRep)
    throw std::invalid_argument(
        "reference_rounds requires a policy-evaluation variant");
  ReferenceOptimum ref;
  if (res.have_reference) {
    ref = reference_optimum(phi0, env.mdps, env.policies, schedule,
                            cfg.reference_rounds, opt, cfg.seed,
                            env.start_state);
    res.reference_converged = ref.converged;
    res.reference_final_step = ref.final_phi_step;
  }

  // Squared value error weighted by the stationary distribution. The control
  // variant's state-value estimate is the greedy max over its Q rows.
  auto mse_of = [&](const Matrix& phi_i, const Vector& theta,
                    int i) -> double {
    if (variant != Variant::PFedQRep)
      return value_mse(phi_i, theta, env.v_exact[i], env.mu[i]);
    double out = 0.0;
    for (int s = 0; s < env.n_states; ++s) {
      double v = phi_i.row(sa_row(s, 0, n_actions)).dot(theta);
      for (int a = 1; a < n_actions; ++a)
        v = std::max(v, phi_i.row(sa_row(s, a, n_actions)).dot(theta));
      const double e = v - env.v_exact[i](s);
      out += env.mu[i](s) * e * e;
    }
    return out;
  };

  FederationState st =
      init_federation(phi0, N, env.start_state, cfg.seed, variant);
  for (int i = 0; i < N; ++i)
    res.initial_mse.push_back(mse_of(phi0, st.thetas[i], i));

  Matrix prev_phi = st.phi;
  std::vector<Matrix> prev_local = st.local_phis;

  auto tracking_of = [&](const Matrix& phi_i, const Vector& theta,
                         int i) -> double {
    if (variant == Variant::PFedQRep)  // no linear fixed point to track
      return std::numeric_limits<double>::quiet_NaN();
    try {
      const Vector y = td_fixed_point(env.mdps[i], env.policies[i], phi_i)
                           .theta_star;
      return (theta - y).squaredNorm();
    } catch (const RankDeficientFeatures&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  auto record = [&](const FederationState& s) {
    const long r = s.round;
    const auto [alpha_r, beta_r] = schedule.rates_at(r);
    const double beta_prev = schedule.rates_at(r - 1).second;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count();

    MetricsRow agg{};
    agg.round = r;
    agg.agent_id = -1;
    agg.alpha_t = alpha_r;
    agg.beta_t = beta_r;
    agg.wall_seconds = wall;

    for (int i = 0; i < N; ++i) {
      const Matrix& phi_i =
          variant == Variant::Independent ? s.local_phis[i] : s.phi;
      MetricsRow row{};
      row.round = r;
      row.agent_id = i;
      row.value_mse = mse_of(phi_i, s.thetas[i], i);
      row.tracking_error = tracking_of(phi_i, s.thetas[i], i);
      row.phi_drift = variant == Variant::Independent
                          ? (s.local_phis[i] - prev_local[i]).norm()
                          : (s.phi - prev_phi).norm();
      if (res.have_reference)
        row.lyapunov = (phi_i - ref.phi_star).squaredNorm() +
                       (beta_prev / alpha_r) * row.tracking_error;
      row.alpha_t = alpha_r;
      row.beta_t = beta_r;
      row.episodes_elapsed = s.episodes[i];
      row.wall_seconds = wall;

      agg.value_mse += row.value_mse / N;
      agg.tracking_error += row.tracking_error / N;
      agg.lyapunov += row.lyapunov / N;
      agg.phi_drift += row.phi_drift / N;
      agg.episodes_elapsed += row.episodes_elapsed;
      res.rows.push_back(row);
    }
    res.rows.push_back(agg);
    prev_phi = s.phi;
    prev_local = s.local_phis;
  };

  record(st);
  st = run_training(std::move(st), env.mdps, env.policies, schedule,
                    cfg.rounds, variant, opt,
                    [&](const FederationState& s, long, double, double) {
                      if (s.round % cfg.record_every == 0 ||
                          s.round == cfg.rounds)
                        record(s);
                    });

  for (int i = 0; i < N; ++i) {
    const Matrix& phi_i =
        variant == Variant::Independent ? st.local_phis[i] : st.phi;
    res.final_mse.push_back(mse_of(phi_i, st.thetas[i], i));
    res.episodes_to_threshold.push_back(episodes_to_threshold(
        agent_rows(res.rows, i), cfg.mse_epsilon_frac * res.initial_mse[i],
        cfg.mse_patience_episodes));
  }
  res.final_state = std::move(st);
  return res;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["env"] = cfg.env;
  j["variant"] = cfg.variant;
  j["n_agents"] = cfg.n_agents;
  j["feature_dim"] = cfg.feature_dim;
  j["local_steps"] = cfg.local_steps;
  j["rounds"] = cfg.rounds;
  j["alpha0"] = cfg.alpha0;
  j["beta0"] = cfg.beta0;
  j["gamma"] = cfg.gamma;
  j["alpha_exponent"] = cfg.alpha_exponent;
  j["beta_exponent"] = cfg.beta_exponent;
  j["weight_bound"] = cfg.weight_bound;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["reference_rounds"] = cfg.reference_rounds;
  j["slow_aggregation"] = cfg.slow_aggregation;
  j["feature_projection"] = cfg.feature_projection;
  j["record_every"] = cfg.record_every;
  j["threads"] = cfg.threads;
  j["epsilon_greedy"] = cfg.epsilon_greedy;
  j["mse_epsilon_frac"] = cfg.mse_epsilon_frac;
  j["mse_patience_episodes"] = cfg.mse_patience_episodes;
  j["sweep_seeds"] = cfg.sweep_seeds;
  j["cliff_policy_eps"] = cfg.cliff_policy_eps;
  j["cliff_slip_prob"] = cfg.cliff_slip_prob;
  j["garnet_states"] = cfg.garnet_states;
  j["garnet_actions"] = cfg.garnet_actions;
  j["garnet_branching"] = cfg.garnet_branching;
  j["garnet_reward_scale"] = cfg.garnet_reward_scale;
  j["garnet_seed"] = cfg.garnet_seed;
  j["kernel_noise"] = cfg.kernel_noise;
  j["mdp_file"] = cfg.mdp_file;
  return j;
}

// Writes metrics.csv, summary.json, and a resumable state.json checkpoint
// into cfg.out_dir.
inline void write_experiment_outputs(const ExperimentConfig& cfg,
                                     const ExperimentResult& res) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  write_metrics_csv((out / "metrics.csv").string(), res.rows);
  save_checkpoint(res.final_state, (out / "state.json").string());

  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["initial_value_mse"] = res.initial_mse;
  j["final_value_mse"] = res.final_mse;
  j["episodes_to_threshold"] = res.episodes_to_threshold;
  j["rounds_completed"] = res.final_state.round;
  if (res.have_reference) {
    j["reference_converged"] = res.reference_converged;
    j["reference_final_phi_step"] = res.reference_final_step;
  }
  std::ofstream f(out / "summary.json");
  if (!f)
    throw std::runtime_error("experiment: cannot write summary.json in '" +
                             cfg.out_dir + "'");
  f << j.dump(2) << '\n';
}

// ---- agent-count sweep ----

struct SweepRow {
  int n_agents = 0;
  long median_rounds = -1;  // lower median of per-seed crossings, -1 censored
  double speedup = 0.0;     // first listed count's median / this median
  int censored_seeds = 0;
};

// Round index at which the aggregate tracking error first drops below the
// threshold; -1 when it never does.
inline long first_crossing_round(const std::vector<MetricsRow>& rows,
                                 double threshold) {
  for (const auto& r : rows)
    if (r.agent_id == -1 && r.tracking_error < threshold) return r.round;
  return -1;
}

inline std::vector<SweepRow> sweep_agents(ExperimentConfig cfg,
                                          const std::vector<int>& agent_counts,
                                          double threshold) {
  if (agent_counts.empty())
    throw std::invalid_argument("sweep: need at least one agent count");
  cfg.record_every = 1;     // the crossing scan needs every round
  cfg.reference_rounds = 0; // no Lyapunov reference inside a sweep
  const std::uint64_t base_seed = cfg.seed;
  constexpr long kNever = std::numeric_limits<long>::max();

  std::vector<SweepRow> table;
  for (int n : agent_counts) {
    ExperimentConfig c = cfg;
    c.n_agents = n;
    if (c.env == "cliffwalking" && !c.cliff_policy_eps.empty()) {
      std::vector<double> eps(n);
      for (int i = 0; i < n; ++i)
        eps[i] = cfg.cliff_policy_eps[i % cfg.cliff_policy_eps.size()];
      c.cliff_policy_eps = std::move(eps);
    }

    std::vector<long> crossings;
    int censored = 0;
    for (int s = 0; s < cfg.sweep_seeds; ++s) {
      c.seed = base_seed + static_cast<std::uint64_t>(s);
      const ExperimentResult res = run_experiment(c);
      const long hit = first_crossing_round(res.rows, threshold);
      crossings.push_back(hit < 0 ? kNever : hit);
      censored += hit < 0 ? 1 : 0;
    }
    std::sort(crossings.begin(), crossings.end());
    const long med = crossings[(crossings.size() - 1) / 2];

    SweepRow row;
    row.n_agents = n;
    row.median_rounds = med == kNever ? -1 : med;
    row.censored_seeds = censored;
    table.push_back(row);
  }

  const long base_med = table.front().median_rounds;
  for (auto& row : table)
    row.speedup = (base_med > 0 && row.median_rounds > 0)
                      ? static_cast<double>(base_med) / row.median_rounds
                      : std::numeric_limits<double>::quiet_NaN();
  return table;
}

inline std::string sweep_table_csv(const std::vector<SweepRow>& table) {
  std::string out = "n_agents,median_rounds,speedup,censored_seeds\n";
  for (const auto& r : table) {
    out += std::to_string(r.n_agents) + ',' + std::to_string(r.median_rounds) +
           ',' + format_double(r.speedup) + ',' +
           std::to_string(r.censored_seeds) + '\n';
  }
  return out;
}

inline void write_sweep_outputs(const ExperimentConfig& cfg,
                                const std::vector<SweepRow>& table) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::ofstream f(fs::path(cfg.out_dir) / "sweep.csv");
  if (!f)
    throw std::runtime_error("sweep: cannot write sweep.csv in '" +
                             cfg.out_dir + "'");
  f << sweep_table_csv(table);
}

}  // namespace fedrep
