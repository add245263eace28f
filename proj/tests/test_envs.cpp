#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "fedrep/envs.hpp"

using namespace fedrep;

TEST_CASE("cliff grid geometry and routing") {
  const CliffWalking env = build_cliffwalking();
  const int cols = 12;
  REQUIRE(env.mdp.n_states() == 48);
  REQUIRE(env.mdp.n_actions() == 4);
  CHECK(env.start == 36);
  CHECK(env.goal == 47);
  REQUIRE(env.cliff.size() == 10);
  CHECK(env.cliff.front() == 37);
  CHECK(env.cliff.back() == 46);
  CHECK_NOTHROW(env.mdp.validate());

  // Goal routes to start with zero reward under every action.
  for (int a = 0; a < 4; ++a) {
    CHECK(env.mdp.kernel[a](env.goal, env.start) == 1.0);
    CHECK(env.mdp.reward(env.goal, a) == 0.0);
  }

  // Stepping off the row above the cliff lands back at start with the fall
  // penalty. State 25 sits directly above cliff cell 37.
  CHECK(env.mdp.kernel[2](25, env.start) == 1.0);
  CHECK(env.mdp.reward(25, 2) == -100.0);

  // A plain move: right from the start's row neighbor above (state 24).
  CHECK(env.mdp.kernel[1](24, 25) == 1.0);
  CHECK(env.mdp.reward(24, 1) == -1.0);

  // Walls clamp: moving left at the top-left corner stays put.
  CHECK(env.mdp.kernel[3](0, 0) == 1.0);

  // Start cell: up leaves the bottom row, right falls into the cliff.
  CHECK(env.mdp.kernel[0](env.start, env.start - cols) == 1.0);
  CHECK(env.mdp.kernel[1](env.start, env.start) == 1.0);
  CHECK(env.mdp.reward(env.start, 1) == -100.0);
}

TEST_CASE("greedy-path value matches the renewal-cycle formula") {
  // The deterministic shortest route is 13 steps of -1 and one free reset,
  // so V(start) = -(1 - g^13) / ((1 - g)(1 - g^14)).
  CliffWalkingSpec spec;
  spec.gamma = 0.99;
  const CliffWalking env = build_cliffwalking(spec);
  const Policy greedy = cliff_eps_soft_policy(spec, 0.0);
  const Vector v = exact_value(env.mdp, greedy);

  const double g = spec.gamma;
  const double expect =
      -(1.0 - std::pow(g, 13)) / ((1.0 - g) * (1.0 - std::pow(g, 14)));
  CHECK(v(env.start) == Catch::Approx(expect).epsilon(0).margin(1e-9));
  CHECK(expect == Catch::Approx(-93.31433882978197).epsilon(0).margin(1e-10));
}

TEST_CASE("softened policies stay valid and mix toward uniform") {
  const CliffWalkingSpec spec;
  const CliffWalking env = build_cliffwalking(spec);
  for (double eps : {0.1, 0.2, 0.3, 1.0}) {
    const Policy pi = cliff_eps_soft_policy(spec, eps);
    CHECK_NOTHROW(validate_policy(pi, env.mdp));
    // Greedy mass on the preferred action, eps/4 elsewhere.
    CHECK(pi(env.start, 0) == Catch::Approx(1.0 - eps + eps / 4.0).epsilon(0).margin(1e-15));
    CHECK(pi(env.start, 1) == Catch::Approx(eps / 4.0).epsilon(0).margin(1e-15));
  }
  CHECK_THROWS_AS(cliff_eps_soft_policy(spec, 1.5), std::invalid_argument);
}

TEST_CASE("slip mass spreads over all four moves") {
  CliffWalkingSpec spec;
  spec.slip_prob = 0.2;
  const CliffWalking env = build_cliffwalking(spec);
  CHECK_NOTHROW(env.mdp.validate());
  // From the top-left corner moving right: intended with 0.85, each other
  // move with 0.05 (up and left clamp back into the corner).
  const int s = 0;
  CHECK(env.mdp.kernel[1](s, 1) == Catch::Approx(0.85).epsilon(0).margin(1e-12));
  CHECK(env.mdp.kernel[1](s, 12) == Catch::Approx(0.05).epsilon(0).margin(1e-12));
  CHECK(env.mdp.kernel[1](s, 0) == Catch::Approx(0.10).epsilon(0).margin(1e-12));
}

TEST_CASE("random benchmark model respects its spec") {
  GarnetSpec spec;
  spec.n_states = 12;
  spec.n_actions = 2;
  spec.branching = 4;
  spec.reward_scale = 0.5;
  RandomStream rng(21);
  const Mdp m = build_garnet(spec, rng);
  CHECK_NOTHROW(m.validate());
  REQUIRE(m.n_states() == 12);
  REQUIRE(m.n_actions() == 2);

  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < 12; ++s) {
      int nonzero = 0;
      for (int s2 = 0; s2 < 12; ++s2) nonzero += m.kernel[a](s, s2) > 0.0;
      CHECK(nonzero <= 4);
      CHECK(nonzero >= 1);
      CHECK(m.kernel[a].row(s).sum() == Catch::Approx(1.0).epsilon(0).margin(1e-12));
    }
  CHECK(m.reward.maxCoeff() <= 0.5);
  CHECK(m.reward.minCoeff() >= -0.5);

  // The accepted draw always has a unique stationary distribution under the
  // uniform policy; that is the redraw loop's contract.
  const Policy pi = uniform_policy(12, 2);
  CHECK_NOTHROW(stationary_distribution(transition_under_policy(m, pi)));
}

TEST_CASE("benchmark generation is a pure function of the stream") {
  GarnetSpec spec;
  RandomStream a(7), b(7);
  const Mdp m1 = build_garnet(spec, a);
  const Mdp m2 = build_garnet(spec, b);
  CHECK(m1.reward == m2.reward);
  for (int k = 0; k < spec.n_actions; ++k) CHECK(m1.kernel[k] == m2.kernel[k]);

  RandomStream c(8);
  const Mdp m3 = build_garnet(spec, c);
  CHECK(m1.reward != m3.reward);
}

TEST_CASE("kernel perturbation stays within the requested radius") {
  GarnetSpec spec;
  RandomStream rng(7);
  const Mdp base = build_garnet(spec, rng);

  RandomStream noise(31);
  const double mag = 0.15;
  const Mdp shifted = perturb_kernel(base, mag, noise);
  CHECK_NOTHROW(shifted.validate());
  for (int a = 0; a < base.n_actions(); ++a)
    for (int s = 0; s < base.n_states(); ++s) {
      const double tv =
          0.5 * (shifted.kernel[a].row(s) - base.kernel[a].row(s))
                    .cwiseAbs()
                    .sum();
      CHECK(tv <= mag + 1e-12);
    }
  CHECK(shifted.reward == base.reward);

  RandomStream noise2(31);
  const Mdp same = perturb_kernel(base, 0.0, noise2);
  for (int a = 0; a < base.n_actions(); ++a)
    CHECK(same.kernel[a] == base.kernel[a]);
}

TEST_CASE("uniform policy is uniform") {
  const Policy pi = uniform_policy(5, 4);
  REQUIRE(pi.rows() == 5);
  REQUIRE(pi.cols() == 4);
  CHECK(pi.minCoeff() == 0.25);
  CHECK(pi.maxCoeff() == 0.25);
}
