#include <doctest.h>

#include <random>

#include "support.hpp"

using namespace diffrbd;
using testing::rel_err;

namespace {

ReplayBuffer random_transitions(const KinematicTree<double>& tree, const SystemSpec& spec, int count, double u_range,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ReplayBuffer buffer;
  for (int k = 0; k < count; ++k) {
    JointState<double> s = JointState<double>::zero(tree.nq(), tree.nv());
    s.q = testing::uniform(rng, static_cast<std::size_t>(tree.nq()), -1.5, 1.5);
    s.qd = testing::uniform(rng, static_cast<std::size_t>(tree.nv()), -1.0, 1.0);
    const auto x = spec.embedding.embed(s);
    const auto u = testing::uniform(rng, spec.control_dim(), -u_range, u_range);
    buffer.add({x, u, spec.transition(tree, std::span<const double>(x), std::span<const double>(u))});
  }
  return buffer;
}

std::vector<StatePair> pendulum_pairs(const KinematicTree<double>& truth, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<JointState<double>> starts;
  for (int k = 0; k < count; ++k) {
    JointState<double> s = JointState<double>::zero(3, 3);
    s.q = testing::uniform(rng, 3, -1.0, 1.0);
    s.qd = testing::uniform(rng, 3, -1.0, 1.0);
    starts.push_back(s);
  }
  return make_state_pairs(truth, starts, 20, 0.05);
}

std::vector<double> log_vec(std::vector<double> v) {
  for (auto& e : v) e = std::log(e);
  return v;
}

}  // namespace

TEST_CASE("replay buffer keeps insertion order") {
  ReplayBuffer b;
  for (int k = 0; k < 5; ++k) b.add({{double(k)}, {}, {}});
  REQUIRE(b.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(b[static_cast<std::size_t>(k)].x[0] == k);
  b.clear();
  CHECK(b.empty());
}

TEST_CASE("one-step prediction loss") {
  const auto tree = testing::load("cartpole.json");
  const auto spec = SystemSpec::for_tree(tree, {"slider"}, 0.05);
  const auto buffer = random_transitions(tree, spec, 20, 10.0, 1);
  const auto theta = get_parameters(tree);
  CHECK(prediction_loss(tree, theta, buffer, spec).value < 1e-18);
  CHECK(prediction_loss_value(tree, buffer, spec) < 1e-18);

  ReplayBuffer single;
  single.add(buffer[0]);
  auto perturbed = theta;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += 0.1 * (1.0 + double(i % 3));
  const auto lg = prediction_loss(tree, perturbed, single, spec);
  CHECK(lg.value > 0.0);
  const auto fd = ad::finite_diff_gradient_relative(
      [&](const std::vector<double>& th) {
        return prediction_loss_value(with_parameters<double>(tree, std::span<const double>(th)), single, spec);
      },
      perturbed);
  CHECK(rel_err(lg.gradient, fd) < 1e-5);

  CHECK_THROWS_AS(prediction_loss(tree, theta, ReplayBuffer{}, spec), std::invalid_argument);
  CHECK_THROWS_AS(prediction_loss(tree, std::vector<double>(3, 0.0), buffer, spec), std::invalid_argument);
}

TEST_CASE("loss does not depend on the worker count") {
  const auto tree = testing::load("double_cartpole.json");
  const auto spec = SystemSpec::for_tree(tree, {"slider"}, 0.05);
  const auto buffer = random_transitions(tree, spec, 37, 5.0, 2);
  const std::vector<double> theta(14, 0.3);
  const auto a = prediction_loss(tree, theta, buffer, spec, 1);
  const auto b = prediction_loss(tree, theta, buffer, spec, 4);
  CHECK(a.value == b.value);
  CHECK(a.gradient == b.gradient);
}

TEST_CASE("a one-step horizon on an embedding-free system equals the one-step loss") {
  // Only prismatic joints: the embedded state is (p, p') per joint, the raw state.
  const char* doc = R"({"gravity":[0,0,-9.81],
    "bodies":[{"name":"sled","mass":1.5},{"name":"puck","mass":0.5}],
    "joints":[{"name":"rail","type":"prismatic","parent":"world","child":"sled","origin":{"rpy":[0,0.3,0]},"axis":[1,0,0]},
              {"name":"track","type":"prismatic","parent":"sled","child":"puck","origin":{"rpy":[0.2,0,0]},"axis":[0,1,0]}],
    "free_parameters":["joints/rail/origin/rpy/1","joints/track/origin/rpy/0","bodies/puck/mass"]})";
  const auto tree = load_model(doc);
  const auto spec = SystemSpec::for_tree(tree, {"rail"}, 0.05);
  std::mt19937_64 rng(3);
  std::vector<JointState<double>> starts;
  ReplayBuffer buffer;
  for (int k = 0; k < 6; ++k) {
    JointState<double> s = JointState<double>::zero(2, 2);
    s.q = testing::uniform(rng, 2, -1.0, 1.0);
    s.qd = testing::uniform(rng, 2, -1.0, 1.0);
    starts.push_back(s);
    const auto x = spec.embedding.embed(s);
    const std::vector<double> u{0.0};
    buffer.add({x, u, spec.transition(tree, std::span<const double>(x), std::span<const double>(u))});
  }
  const auto pairs = make_state_pairs(tree, starts, 1, 0.05);
  const std::vector<double> theta{0.1, -0.4, std::log(2.0)};
  const auto h = horizon_prediction_loss(tree, theta, pairs, 1, 0.05);
  const auto p = prediction_loss(tree, theta, buffer, spec);
  CHECK(h.value == doctest::Approx(p.value).epsilon(1e-12));
  CHECK(rel_err(h.gradient, p.gradient) < 1e-12);
}

TEST_CASE("H-step prediction loss on the three-link pendulum") {
  const auto truth = testing::load("pendulum3.json");
  const auto pairs = pendulum_pairs(truth, 8, 4);
  const auto wrong = log_vec({1.0, 5.0, 0.5});
  const auto lg = horizon_prediction_loss(truth, wrong, pairs, 20, 0.05);
  CHECK(lg.value > 0.0);
  CHECK(horizon_prediction_loss(truth, get_parameters(truth), pairs, 20, 0.05).value < 1e-20);

  const auto fd = ad::finite_diff_gradient_relative(
      [&](const std::vector<double>& th) {
        const auto m = with_parameters<double>(truth, std::span<const double>(th));
        double loss = 0.0;
        for (const auto& p : pairs) {
          RolloutOptions o;
          o.dt = 0.05;
          o.compute_poses = false;
          const auto end = rollout(m, p.start, {}, 20, o).states.back();
          for (int i = 0; i < 3; ++i) loss += std::pow(end.q[i] - p.target.q[i], 2) + std::pow(end.qd[i] - p.target.qd[i], 2);
        }
        return loss;
      },
      wrong);
  CHECK(rel_err(lg.gradient, fd) < 1e-4);
  CHECK_THROWS_AS(horizon_prediction_loss(truth, wrong, pairs, 0, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(horizon_prediction_loss(truth, wrong, {}, 20, 0.05), std::invalid_argument);
}

TEST_CASE("single-horizon fit never increases the loss and stops at the optimum") {
  const auto truth = testing::load("pendulum3.json");
  const auto pairs = pendulum_pairs(truth, 16, 5);
  auto model = truth;
  set_parameters(model, log_vec({1.0, 5.0, 0.5}));
  OptimizeOptions opts;
  opts.max_iterations = 20;
  const auto fit = fit_dynamics(model, pairs, 20, 0.05, opts);
  CHECK(fit.loss_after <= fit.loss_before);
  for (std::size_t k = 1; k < fit.optimizer.history.size(); ++k)
    CHECK(fit.optimizer.history[k].value <= fit.optimizer.history[k - 1].value);

  auto exact = truth;
  CHECK(fit_dynamics(exact, pairs, 20, 0.05).optimizer.iterations == 0);
  CHECK_THROWS_AS(fit_dynamics(model, std::vector<StatePair>{}, 20, 0.05), std::invalid_argument);
}

TEST_CASE("trajectory windows and the horizon schedule") {
  CHECK(horizon_schedule(20) == std::vector<int>{1, 2, 5, 10, 20});
  CHECK(horizon_schedule(1) == std::vector<int>{1});
  CHECK(horizon_schedule(7) == std::vector<int>{1, 2, 5, 7});
  CHECK(horizon_schedule(100) == std::vector<int>{1, 2, 5, 10, 20, 50, 100});

  const auto truth = testing::load("pendulum3.json");
  std::vector<JointState<double>> starts(2, JointState<double>::zero(3, 3));
  starts[1].q = {0.3, -0.2, 0.1};
  const auto trajs = make_state_trajectories(truth, starts, 20, 0.05);
  REQUIRE(trajs.size() == 2);
  CHECK(trajs[0].size() == 21);
  CHECK(pairs_at_horizon(trajs, 1).size() == 40);
  CHECK(pairs_at_horizon(trajs, 5).size() == 8);
  CHECK(pairs_at_horizon(trajs, 20).size() == 2);
  CHECK(pairs_at_horizon(trajs, 21).empty());
  // The full-horizon windows are exactly the state pairs of the same starts.
  const auto direct = make_state_pairs(truth, starts, 20, 0.05);
  const auto windows = pairs_at_horizon(trajs, 20);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(windows[k].target.q == direct[k].target.q);
    CHECK(windows[k].target.qd == direct[k].target.qd);
  }
}

TEST_CASE("link lengths are recovered from H = 20 trajectory data") {
  const auto truth = testing::load("pendulum3.json");
  std::mt19937_64 rng(5);
  std::vector<JointState<double>> starts;
  for (int k = 0; k < 50; ++k) {
    JointState<double> s = JointState<double>::zero(3, 3);
    s.q = testing::uniform(rng, 3, -1.0, 1.0);
    s.qd = testing::uniform(rng, 3, -1.0, 1.0);
    starts.push_back(s);
  }
  const auto trajs = make_state_trajectories(truth, starts, 20, 0.05);
  REQUIRE(pairs_at_horizon(trajs, 20).size() == 50);

  auto model = truth;
  set_parameters(model, log_vec({1.0, 5.0, 0.5}));
  const auto fit = fit_dynamics_staged(model, trajs, 20, 0.05, {}, 4);
  CHECK(fit.fit.loss_after <= fit.fit.loss_before);
  for (const auto& st : fit.stages) CHECK(st.loss_after <= st.loss_before);
  for (const auto& b : model.bodies) CHECK(std::abs(*b.length - 3.0) < 1e-2);

  // Identifiability: the same data from other corners of [0.5, 5]^3.
  for (const auto& init : {std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{5.0, 5.0, 5.0},
                           std::vector<double>{5.0, 0.5, 5.0}, std::vector<double>{0.5, 5.0, 2.0}}) {
    auto m = truth;
    set_parameters(m, log_vec(init));
    fit_dynamics_staged(m, trajs, 20, 0.05, {}, 4);
    for (const auto& b : m.bodies) CHECK(std::abs(*b.length - 3.0) < 1e-2);
  }
  CHECK_THROWS_AS(fit_dynamics_staged(model, std::vector<StateTrajectory>{}, 20, 0.05), std::invalid_argument);
}

TEST_CASE("double cartpole parameters fit from fewer than 100 transitions") {
  auto truth = testing::load("double_cartpole.json");
  // Hidden environment values differ from the all-2 initialization.
  std::vector<double> hidden = get_parameters(truth);
  set_parameters(truth, hidden);
  const auto spec = SystemSpec::for_tree(truth, {"slider"}, 0.05);
  const auto buffer = random_transitions(truth, spec, 90, 10.0, 7);

  auto model = truth;
  std::vector<double> init;
  for (const auto& b : model.bindings) init.push_back(b.role == ParameterRole::LogPositive ? std::log(2.0) : 2.0);
  set_parameters(model, init);
  OptimizeOptions opts;
  opts.max_iterations = 100;
  const auto fit = fit_dynamics(model, buffer, spec, opts);
  CHECK(fit.loss_after <= fit.loss_before);
  CHECK(fit.loss_after < 1e-4 * fit.loss_before);
  CHECK_THROWS_AS(fit_dynamics(model, ReplayBuffer{}, spec), std::invalid_argument);
}

TEST_CASE("fitting from the true parameters takes no iterations") {
  auto tree = testing::load("cartpole.json");
  const auto spec = SystemSpec::for_tree(tree, {"slider"}, 0.05);
  const auto buffer = random_transitions(tree, spec, 10, 10.0, 8);
  const auto fit = fit_dynamics(tree, buffer, spec);
  CHECK(fit.optimizer.iterations == 0);
  CHECK(fit.theta_after == fit.theta_before);
}
