#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrep/federation.hpp"
#include "fedrep/learners.hpp"
#include "fedrep/representation.hpp"

namespace fedrep {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment fixture. Files are flat `key = value` lines; '#' starts a
// comment, blank lines are skipped, unknown keys are rejected so a typo can't
// silently fall back to a default.
struct ExperimentConfig {
  // required
  std::string env;      // cliffwalking | garnet | mdp-file
  std::string variant;  // pfedtd-rep | pfedq-rep | fedtd-fixed-phi | independent
  int n_agents = 0;
  int feature_dim = 0;
  int local_steps = 0;
  long rounds = 0;
  double alpha0 = 0.0;
  double beta0 = 0.0;
  double gamma = 0.0;

  // optional with defaults
  double alpha_exponent = 5.0 / 6.0;
  double beta_exponent = 1.0;
  double weight_bound = 10.0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  long reference_rounds = 0;  // 0 = no Lyapunov reference run
  std::string slow_aggregation = "sum";   // sum | mean
  std::string feature_projection = "rows";  // rows | frobenius
  long record_every = 1;
  int threads = 1;
  double epsilon_greedy = 0.1;
  double mse_epsilon_frac = 0.05;
  long mse_patience_episodes = 10;
  int sweep_seeds = 5;

  // cliffwalking
  std::vector<double> cliff_policy_eps;  // one entry per agent
  double cliff_slip_prob = 0.0;

  // garnet
  int garnet_states = 10;
  int garnet_actions = 3;
  int garnet_branching = 3;
  double garnet_reward_scale = 1.0;
  std::uint64_t garnet_seed = 7;

  // shared env knobs
  double kernel_noise = 0.0;
  std::string mdp_file;

  Schedule schedule() const {
    return Schedule{alpha0, beta0, alpha_exponent, beta_exponent};
  }
  SlowAggregation aggregation() const {
    return slow_aggregation == "mean" ? SlowAggregation::Mean
                                      : SlowAggregation::Sum;
  }
  FeatureProjection projection() const {
    return feature_projection == "frobenius"
               ? FeatureProjection::WholeMatrixFrobenius
               : FeatureProjection::RowUnitBall;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& value, const std::string& key, int line) {
  std::istringstream ss(value);
  T out;
  ss >> out;
  std::string rest;
  if (ss.fail() || (ss >> rest && !rest.empty()))
    throw ConfigError("config line " + std::to_string(line) + ": field '" +
                      key + "' has malformed value '" + value + "'");
  return out;
}

inline std::vector<double> parse_double_list(const std::string& value,
                                             const std::string& key, int line) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigError("config line " + std::to_string(line) + ": field '" +
                        key + "' has an empty list entry");
    out.push_back(parse_number<double>(item, key, line));
  }
  return out;
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg);

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::map<std::string, bool> seen;
  std::string line;
  int line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key or value");
    if (seen[key])
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    seen[key] = true;

    if (key == "env") cfg.env = value;
    else if (key == "variant") cfg.variant = value;
    else if (key == "n_agents") cfg.n_agents = detail::parse_number<int>(value, key, line_no);
    else if (key == "feature_dim") cfg.feature_dim = detail::parse_number<int>(value, key, line_no);
    else if (key == "local_steps") cfg.local_steps = detail::parse_number<int>(value, key, line_no);
    else if (key == "rounds") cfg.rounds = detail::parse_number<long>(value, key, line_no);
    else if (key == "alpha0") cfg.alpha0 = detail::parse_number<double>(value, key, line_no);
    else if (key == "beta0") cfg.beta0 = detail::parse_number<double>(value, key, line_no);
    else if (key == "gamma") cfg.gamma = detail::parse_number<double>(value, key, line_no);
    else if (key == "alpha_exponent") cfg.alpha_exponent = detail::parse_number<double>(value, key, line_no);
    else if (key == "beta_exponent") cfg.beta_exponent = detail::parse_number<double>(value, key, line_no);
    else if (key == "weight_bound") cfg.weight_bound = detail::parse_number<double>(value, key, line_no);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(value, key, line_no);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "reference_rounds") cfg.reference_rounds = detail::parse_number<long>(value, key, line_no);
    else if (key == "slow_aggregation") cfg.slow_aggregation = value;
    else if (key == "feature_projection") cfg.feature_projection = value;
    else if (key == "record_every") cfg.record_every = detail::parse_number<long>(value, key, line_no);
    else if (key == "threads") cfg.threads = detail::parse_number<int>(value, key, line_no);
    else if (key == "epsilon_greedy") cfg.epsilon_greedy = detail::parse_number<double>(value, key, line_no);
    else if (key == "mse_epsilon_frac") cfg.mse_epsilon_frac = detail::parse_number<double>(value, key, line_no);
    else if (key == "mse_patience_episodes") cfg.mse_patience_episodes = detail::parse_number<long>(value, key, line_no);
    else if (key == "sweep_seeds") cfg.sweep_seeds = detail::parse_number<int>(value, key, line_no);
    else if (key == "cliff_policy_eps") cfg.cliff_policy_eps = detail::parse_double_list(value, key, line_no);
    else if (key == "cliff_slip_prob") cfg.cliff_slip_prob = detail::parse_number<double>(value, key, line_no);
    else if (key == "garnet_states") cfg.garnet_states = detail::parse_number<int>(value, key, line_no);
    else if (key == "garnet_actions") cfg.garnet_actions = detail::parse_number<int>(value, key, line_no);
    else if (key == "garnet_branching") cfg.garnet_branching = detail::parse_number<int>(value, key, line_no);
    else if (key == "garnet_reward_scale") cfg.garnet_reward_scale = detail::parse_number<double>(value, key, line_no);
    else if (key == "garnet_seed") cfg.garnet_seed = detail::parse_number<std::uint64_t>(value, key, line_no);
    else if (key == "kernel_noise") cfg.kernel_noise = detail::parse_number<double>(value, key, line_no);
    else if (key == "mdp_file") cfg.mdp_file = value;
    else
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
  }

  // required fields
  const char* missing = nullptr;
  if (!seen["env"]) missing = "env";
  else if (!seen["variant"]) missing = "variant";
  else if (!seen["n_agents"]) missing = "n_agents";
  else if (!seen["feature_dim"]) missing = "feature_dim";
  else if (!seen["local_steps"]) missing = "local_steps";
  else if (!seen["rounds"]) missing = "rounds";
  else if (!seen["alpha0"]) missing = "alpha0";
  else if (!seen["beta0"]) missing = "beta0";
  else if (!seen["gamma"]) missing = "gamma";
  if (missing)
    throw ConfigError(std::string("config: missing required field '") +
                      missing + "'");

  validate_config(cfg);
  return cfg;
}

inline void validate_config(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config: field '" + field + "' " + why);
  };
  if (cfg.env != "cliffwalking" && cfg.env != "garnet" && cfg.env != "mdp-file")
    fail("env", "must be cliffwalking, garnet, or mdp-file");
  parse_variant(cfg.variant);  // throws on unknown tags
  if (cfg.n_agents < 1) fail("n_agents", "must be >= 1");
  if (cfg.feature_dim < 1) fail("feature_dim", "must be >= 1");
  if (cfg.local_steps < 1) fail("local_steps", "must be >= 1");
  if (cfg.rounds < 1) fail("rounds", "must be >= 1");
  if (cfg.alpha0 <= 0.0) fail("alpha0", "must be > 0");
  if (cfg.beta0 <= 0.0) fail("beta0", "must be > 0");
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) fail("gamma", "must lie in (0,1)");
  if (cfg.beta_exponent < cfg.alpha_exponent)
    fail("beta_exponent", "must be >= alpha_exponent");
  if (cfg.weight_bound <= 0.0) fail("weight_bound", "must be > 0");
  if (cfg.reference_rounds < 0) fail("reference_rounds", "must be >= 0");
  if (cfg.slow_aggregation != "sum" && cfg.slow_aggregation != "mean")
    fail("slow_aggregation", "must be sum or mean");
  if (cfg.feature_projection != "rows" && cfg.feature_projection != "frobenius")
    fail("feature_projection", "must be rows or frobenius");
  if (cfg.record_every < 1) fail("record_every", "must be >= 1");
  if (cfg.threads < 1) fail("threads", "must be >= 1");
  if (!(cfg.epsilon_greedy >= 0.0 && cfg.epsilon_greedy <= 1.0))
    fail("epsilon_greedy", "must lie in [0,1]");
  if (cfg.mse_epsilon_frac <= 0.0) fail("mse_epsilon_frac", "must be > 0");
  if (cfg.mse_patience_episodes < 1) fail("mse_patience_episodes", "must be >= 1");
  if (cfg.sweep_seeds < 1) fail("sweep_seeds", "must be >= 1");
  if (cfg.env == "cliffwalking") {
    if (!cfg.cliff_policy_eps.empty() &&
        static_cast<int>(cfg.cliff_policy_eps.size()) != cfg.n_agents)
      fail("cliff_policy_eps", "needs one entry per agent");
    if (!(cfg.cliff_slip_prob >= 0.0 && cfg.cliff_slip_prob < 1.0))
      fail("cliff_slip_prob", "must lie in [0,1)");
  }
  if (cfg.env == "garnet") {
    if (cfg.garnet_states < 2) fail("garnet_states", "must be >= 2");
    if (cfg.garnet_actions < 1) fail("garnet_actions", "must be >= 1");
    if (cfg.garnet_branching < 1 || cfg.garnet_branching > cfg.garnet_states)
      fail("garnet_branching", "must lie in [1, garnet_states]");
    if (cfg.garnet_reward_scale <= 0.0)
      fail("garnet_reward_scale", "must be > 0");
  }
  if (cfg.env == "mdp-file" && cfg.mdp_file.empty())
    fail("mdp_file", "is required when env = mdp-file");
  if (!(cfg.kernel_noise >= 0.0 && cfg.kernel_noise <= 1.0))
    fail("kernel_noise", "must lie in [0,1]");
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

// FEDREP_SEED and FEDREP_OUT override the config file; callers apply
// explicit command-line flags afterwards so flags beat both.
inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* e = std::getenv("FEDREP_SEED")) {
    std::uint64_t v = 0;
    const char* end = e + std::strlen(e);
    auto [p, ec] = std::from_chars(e, end, v);
    if (ec != std::errc{} || p != end)
      throw ConfigError(std::string("FEDREP_SEED is not an unsigned integer: '") +
                        e + "'");
    cfg.seed = v;
  }
  if (const char* e = std::getenv("FEDREP_OUT")) cfg.out_dir = e;
}

}  // namespace fedrep
