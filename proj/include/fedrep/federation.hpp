#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedrep/learners.hpp"
#include "fedrep/mdp.hpp"
#include "fedrep/representation.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

// Two-timescale step sizes: alpha_t = alpha0 / (t+2)^alpha_exponent for the
// weights, beta_t = beta0 / (t+2)^beta_exponent for the features. The default
// exponents (5/6, 1) keep beta_t/alpha_t non-increasing, which the schedule
// validation enforces in general.
struct Schedule {
  double alpha0 = 0.5;
  double beta0 = 0.5;
  double alpha_exponent = 5.0 / 6.0;
  double beta_exponent = 1.0;

  void validate() const {
    if (alpha0 <= 0.0 || beta0 <= 0.0)
      throw std::invalid_argument("schedule: alpha0 and beta0 must be positive");
    if (beta_exponent < alpha_exponent)
      throw std::invalid_argument(
          "schedule: beta must decay at least as fast as alpha "
          "(beta_exponent >= alpha_exponent)");
  }

  std::pair<double, double> rates_at(long t) const {
    const double base = static_cast<double>(t) + 2.0;
    return {alpha0 / std::pow(base, alpha_exponent),
            beta0 / std::pow(base, beta_exponent)};
  }
};

enum class Variant { PFedTdRep, PFedQRep, FedTdFixedPhi, Independent };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::PFedTdRep: return "pfedtd-rep";
    case Variant::PFedQRep: return "pfedq-rep";
    case Variant::FedTdFixedPhi: return "fedtd-fixed-phi";
    case Variant::Independent: return "independent";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "pfedtd-rep") return Variant::PFedTdRep;
  if (s == "pfedq-rep") return Variant::PFedQRep;
  if (s == "fedtd-fixed-phi") return Variant::FedTdFixedPhi;
  if (s == "independent") return Variant::Independent;
  throw std::invalid_argument("unknown algorithm variant '" + s + "'");
}

// Elementwise mean of the local feature matrices.
inline Matrix server_average(const std::vector<Matrix>& locals) {
  if (locals.empty())
    throw std::invalid_argument("server_average: empty list");
  Matrix out = locals[0];
  for (std::size_t i = 1; i < locals.size(); ++i) {
    if (locals[i].rows() != out.rows() || locals[i].cols() != out.cols())
      throw std::invalid_argument("server_average: shape mismatch");
    out += locals[i];
  }
  return out / static_cast<double>(locals.size());
}

struct FederationState {
  Matrix phi;                      // global representation
  std::vector<Matrix> local_phis;  // per-agent copies (independent variant only)
  std::vector<Vector> thetas;
  std::vector<int> chain_states;
  std::vector<RandomStream> streams;
  std::vector<long> episodes;  // completed episodes per agent
  long round = 0;

  int n_agents() const { return static_cast<int>(thetas.size()); }

  bool operator==(const FederationState& other) const {
    if (round != other.round || streams != other.streams ||
        chain_states != other.chain_states || episodes != other.episodes)
      return false;
    if (phi != other.phi) return false;
    if (thetas.size() != other.thetas.size()) return false;
    for (std::size_t i = 0; i < thetas.size(); ++i)
      if (thetas[i] != other.thetas[i]) return false;
    if (local_phis.size() != other.local_phis.size()) return false;
    for (std::size_t i = 0; i < local_phis.size(); ++i)
      if (local_phis[i] != other.local_phis[i]) return false;
    return true;
  }
};

struct RoundOptions {
  int K = 1;
  double B = 10.0;
  double epsilon_greedy = 0.1;
  SlowAggregation aggregation = SlowAggregation::Sum;
  FeatureProjection projection = FeatureProjection::RowUnitBall;
  int threads = 1;
  // Entering this state completes an episode (it is the routed terminal);
  // -1 disables episode counting.
  int episode_marker = -1;
};

inline FederationState init_federation(const Matrix& phi0, int n_agents,
                                       int start_state, std::uint64_t seed,
                                       Variant variant) {
  FederationState st;
  st.phi = phi0;
  st.thetas.assign(n_agents, Vector::Zero(phi0.cols()));
  st.chain_states.assign(n_agents, start_state);
  st.episodes.assign(n_agents, 0);
  st.streams.reserve(n_agents);
  for (int i = 0; i < n_agents; ++i)
    st.streams.push_back(derive_stream(seed, static_cast<std::uint64_t>(i)));
  if (variant == Variant::Independent)
    st.local_phis.assign(n_agents, phi0);
  st.round = 0;
  return st;
}

namespace detail {

struct AgentOutcome {
  Vector theta;
  Matrix local_phi;
  int chain_state = 0;
  RandomStream stream{0};
  long new_episodes = 0;
};

}  // namespace detail

// One communication round of the chosen variant. Each agent's work touches
// only its own slot, so agents may run on any number of worker threads; the
// merge below walks slots in index order, which makes the result independent
// of the thread count.
inline void run_round(FederationState& st, const std::vector<Mdp>& mdps,
                      const std::vector<Policy>& policies, double alpha,
                      double beta, Variant variant, const RoundOptions& opt) {
  const int N = st.n_agents();
  if (static_cast<int>(mdps.size()) != N ||
      (variant != Variant::PFedQRep &&
       static_cast<int>(policies.size()) != N))
    throw std::invalid_argument("run_round: agent count mismatch");

  std::vector<detail::AgentOutcome> outs(N);

  auto agent_work = [&](int i) {
    detail::AgentOutcome& out = outs[i];
    RandomStream rng = st.streams[i];
    const Matrix& phi =
        variant == Variant::Independent ? st.local_phis[i] : st.phi;
    LocalHyperparams hyper{opt.K, alpha, beta, opt.epsilon_greedy};

    TdRoundResult res =
        variant == Variant::PFedQRep
            ? q_weight_update(phi, st.thetas[i], mdps[i], st.chain_states[i],
                              hyper, opt.B, rng)
            : weight_update(phi, st.thetas[i], mdps[i], policies[i],
                            st.chain_states[i], hyper, opt.B, rng);

    if (variant == Variant::FedTdFixedPhi) {
      out.local_phi = phi;  // frozen
    } else if (variant == Variant::PFedQRep) {
      out.local_phi =
          q_feature_update(phi, res.theta, res.observations, beta, mdps[i].gamma,
                           mdps[i].n_actions(), opt.aggregation, opt.projection);
    } else {
      out.local_phi = feature_update(phi, res.theta, res.observations, beta,
                                     mdps[i].gamma, opt.aggregation,
                                     opt.projection);
    }
    if (opt.episode_marker >= 0)
      for (const Observation& obs : res.observations)
        out.new_episodes += obs.next_state == opt.episode_marker ? 1 : 0;
    out.theta = std::move(res.theta);
    out.chain_state = res.chain_state;
    out.stream = rng;
  };

  if (opt.threads <= 1 || N == 1) {
    for (int i = 0; i < N; ++i) agent_work(i);
  } else {
    const int n_workers = std::min(opt.threads, N);
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w)
      pool.emplace_back([&, w] {
        for (int i = w; i < N; i += n_workers) agent_work(i);
      });
    for (auto& th : pool) th.join();
  }

  // Merge, always in agent index order.
  std::vector<Matrix> locals;
  locals.reserve(N);
  for (int i = 0; i < N; ++i) {
    st.thetas[i] = std::move(outs[i].theta);
    st.chain_states[i] = outs[i].chain_state;
    st.streams[i] = outs[i].stream;
    st.episodes[i] += outs[i].new_episodes;
    locals.push_back(std::move(outs[i].local_phi));
  }

  switch (variant) {
    case Variant::PFedTdRep:
    case Variant::PFedQRep:
      st.phi = server_average(locals);
      break;
    case Variant::FedTdFixedPhi: {
      Vector avg = Vector::Zero(st.thetas[0].size());
      for (const Vector& th : st.thetas) avg += th;
      avg /= static_cast<double>(N);
      for (Vector& th : st.thetas) th = avg;
      break;
    }
    case Variant::Independent:
      for (int i = 0; i < N; ++i) st.local_phis[i] = std::move(locals[i]);
      break;
  }
  st.round += 1;
}

// Outer loop over T rounds. The recorder runs after each round with the rates
// that produced it; pass a no-op for reference runs that only need the final
// state.
using RoundRecorder =
    std::function<void(const FederationState&, long t, double alpha, double beta)>;

inline FederationState run_training(FederationState st,
                                    const std::vector<Mdp>& mdps,
                                    const std::vector<Policy>& policies,
                                    const Schedule& schedule, long T,
                                    Variant variant, const RoundOptions& opt,
                                    const RoundRecorder& recorder = {}) {
  if (T < 1) throw std::invalid_argument("run_training: T must be >= 1");
  schedule.validate();
  for (long t = st.round; t < T; ++t) {
    const auto [alpha, beta] = schedule.rates_at(t);
    run_round(st, mdps, policies, alpha, beta, variant, opt);
    if (recorder) recorder(st, t, alpha, beta);
  }
  return st;
}

}  // namespace fedrep
