#include <doctest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace diffrbd;
using testing::rel_err;

namespace {

constexpr double g = 9.81;

// A free box carrying a hinged arm; exercises the floating joint.
const char* kFloatingDoc = R"({
  "gravity": [0, 0, -9.81],
  "bodies": [
    {"name": "box", "mass": 2.0, "com": [0.1, -0.05, 0.02], "inertia": [0.2, 0.25, 0.3, 0.01, 0.0, 0.02]},
    {"name": "arm", "mass": 0.5, "com": [0, 0, -0.3], "inertia": [0.02, 0.02, 0.001, 0, 0, 0]}
  ],
  "joints": [
    {"name": "base", "type": "floating", "parent": "world", "child": "box"},
    {"name": "hinge", "type": "revolute", "parent": "box", "child": "arm",
     "origin": {"xyz": [0.2, 0, 0], "rpy": [0.1, 0, 0]}, "axis": [0, 1, 0]}
  ]
})";

JointState<double> random_state(const KinematicTree<double>& tree, std::mt19937_64& rng) {
  JointState<double> s = neutral_state(tree);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& j : tree.joints) {
    const auto k = static_cast<std::size_t>(j.q_index);
    if (j.type == JointType::Floating) {
      double n = 0.0;
      for (int i = 0; i < 7; ++i) s.q[k + static_cast<std::size_t>(i)] = u(rng);
      for (int i = 3; i < 7; ++i) n += s.q[k + static_cast<std::size_t>(i)] * s.q[k + static_cast<std::size_t>(i)];
      for (int i = 3; i < 7; ++i) s.q[k + static_cast<std::size_t>(i)] /= std::sqrt(n);
    } else if (j.type != JointType::Fixed) {
      s.q[k] = 3.0 * u(rng);
    }
  }
  for (auto& v : s.qd) v = u(rng);
  for (auto& v : s.tau) v = 2.0 * u(rng);
  return s;
}

std::vector<KinematicTree<double>> test_trees() {
  return {testing::load("pendulum.json"), testing::load("cartpole.json"), testing::load("double_cartpole.json"),
          testing::load("pendulum3.json"), load_model(kFloatingDoc),
          from_dh<double>({{0.4, 0.1, 1.2}, {0.0, 0.5, 0.0}, {0.05, 0.4, 0.3}})};
}

// Cart of mass M on a rail, pole of mass m with com at distance l and
// rotational inertia I about its com; theta = 0 is upright.
std::vector<double> cartpole_oracle(double theta, double p_dot, double theta_dot, double f, double torque) {
  (void)p_dot;
  const double M = 1.0, m = 0.1, l = 0.5, I = m * 1.0 / 12.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double a11 = M + m, a12 = m * l * c, a22 = m * l * l + I;
  const double b1 = f + m * l * s * theta_dot * theta_dot;
  const double b2 = torque + m * g * l * s;
  const double det = a11 * a22 - a12 * a12;
  return {(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det};
}

}  // namespace

TEST_CASE("pendulum matches the closed form") {
  const auto tree = testing::load("pendulum.json");
  CHECK(forward_dynamics_aba(tree, std::vector<double>{0.0}, std::vector<double>{0.0}, std::vector<double>{0.0})[0] == 0.0);
  const double at_side =
      forward_dynamics_aba(tree, std::vector<double>{M_PI / 2}, std::vector<double>{0.0}, std::vector<double>{0.0})[0];
  CHECK(at_side == doctest::Approx(-9.81).epsilon(1e-12));
  // Hanging at q = 0 with com (0, 0, -1); q = pi/2 swings it to (1, 0, 0).
  CHECK(forward_kinematics(tree, std::vector<double>{0.0})[0].position.z == 0.0);
  const std::vector<double> down{0.0}, side{M_PI / 2};
  const auto c0 = com_positions(tree, std::span<const double>(down));
  CHECK(c0[0].z == doctest::Approx(-1.0));
  const auto c1 = com_positions(tree, std::span<const double>(side));
  CHECK(c1[0].x == doctest::Approx(1.0));
  CHECK(std::abs(c1[0].z) < 1e-15);

  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto v = testing::uniform(rng, 3, -3.0, 3.0);
    const double qdd = forward_dynamics_aba(tree, std::vector<double>{v[0]}, std::vector<double>{v[1]}, std::vector<double>{v[2]})[0];
    const double expect = -g * std::sin(v[0]) + v[2];
    CHECK(std::abs(qdd - expect) <= 1e-9 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("cartpole matches the Lagrangian equations") {
  const auto tree = testing::load("cartpole.json");
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto v = testing::uniform(rng, 6, -3.0, 3.0);
    const std::vector<double> q{v[0], v[1]}, qd{v[2], v[3]}, tau{v[4], v[5]};
    const auto qdd = forward_dynamics_aba(tree, q, qd, tau);
    const auto expect = cartpole_oracle(v[1], v[2], v[3], v[4], v[5]);
    CHECK(rel_err(qdd, expect) < 1e-9);
  }
}

TEST_CASE("inverse dynamics: statics and zero cases") {
  auto tree = testing::load("pendulum.json");
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const double q = testing::uniform(rng, 1, -3.0, 3.0)[0];
    const auto tau = inverse_dynamics_rnea(tree, std::vector<double>{q}, std::vector<double>{0.0}, std::vector<double>{0.0});
    CHECK(tau[0] == doctest::Approx(1.0 * g * 1.0 * std::sin(q)).epsilon(1e-12));
    CHECK(bias_forces(tree, std::vector<double>{q}, std::vector<double>{0.0})[0] == doctest::Approx(tau[0]).epsilon(1e-15));
  }
  CHECK(mass_matrix(tree, std::vector<double>{0.3})[0] == doctest::Approx(1.0));

  auto free = testing::load("double_cartpole.json");
  free.gravity = Vec3<double>::zero();
  const std::vector<double> zero(3, 0.0);
  CHECK(testing::inf_norm(inverse_dynamics_rnea(free, std::vector<double>{0.3, 1.0, -2.0}, zero, zero)) == 0.0);
  CHECK(testing::inf_norm(bias_forces(free, std::vector<double>{0.3, 1.0, -2.0}, zero)) == 0.0);
}

TEST_CASE("two-link arm velocity products match the Lagrangian") {
  const double l1 = 0.8, l2 = 0.6;
  auto tree = from_dh<double>({{0.0, l1, 0.0}, {0.0, l2, 0.0}});
  tree.gravity = Vec3<double>::zero();
  // Unit point masses at both link ends plus the unit end-effector mass.
  const double m1 = 1.0, m2 = 2.0;
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto v = testing::uniform(rng, 4, -2.0, 2.0);
    const std::vector<double> q{v[0], v[1]}, qd{v[2], v[3]};
    const double s2 = std::sin(q[1]), c2 = std::cos(q[1]);
    const std::vector<double> C{-m2 * l1 * l2 * s2 * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), m2 * l1 * l2 * s2 * qd[0] * qd[0]};
    CHECK(rel_err(bias_forces(tree, q, qd), C) < 1e-12);
    const auto H = mass_matrix(tree, q);
    const double h11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
    const double h12 = m2 * (l2 * l2 + l1 * l2 * c2), h22 = m2 * l2 * l2;
    CHECK(rel_err(H, {h11, h12, h12, h22}) < 1e-12);
  }
}

TEST_CASE("inverse and forward dynamics are consistent on every test tree") {
  std::mt19937_64 rng(5);
  for (const auto& tree : test_trees()) {
    const auto nv = static_cast<std::size_t>(tree.nv());
    for (int t = 0; t < 100; ++t) {
      const auto s = random_state(tree, rng);
      const auto qdd = forward_dynamics_aba(tree, s.q, s.qd, s.tau);
      const auto tau = inverse_dynamics_rnea(tree, s.q, s.qd, qdd);
      CHECK(testing::max_abs_diff(tau, s.tau) < 1e-9 * std::max(1.0, testing::inf_norm(s.tau)));

      const auto H = mass_matrix(tree, s.q);
      const auto C = bias_forces(tree, s.q, s.qd);
      std::vector<double> lhs(C);
      for (std::size_t r = 0; r < nv; ++r)
        for (std::size_t c = 0; c < nv; ++c) lhs[r] += H[r * nv + c] * qdd[c];
      CHECK(testing::max_abs_diff(lhs, s.tau) < 1e-9 * std::max(1.0, testing::inf_norm(s.tau)));
      for (std::size_t r = 0; r < nv; ++r)
        for (std::size_t c = 0; c < r; ++c) CHECK(std::abs(H[r * nv + c] - H[c * nv + r]) < 1e-10);
    }
  }
}

TEST_CASE("dynamics gradients agree with finite differences") {
  std::mt19937_64 rng(6);
  for (const auto& tree : test_trees()) {
    const auto nq = static_cast<std::size_t>(tree.nq()), nv = static_cast<std::size_t>(tree.nv());
    for (int t = 0; t < 20; ++t) {
      const auto s = random_state(tree, rng);
      std::vector<double> x = s.q;
      x.insert(x.end(), s.qd.begin(), s.qd.end());
      x.insert(x.end(), s.tau.begin(), s.tau.end());
      const auto w = testing::uniform(rng, nv, -1.0, 1.0);
      auto f = [&](const auto& z) {
        using S = typename std::decay_t<decltype(z)>::value_type;
        const auto tr = cast_tree<S>(tree);
        const std::span<const S> all(z);
        const auto qdd = forward_dynamics_aba(tr, all.subspan(0, nq), all.subspan(nq, nv), all.subspan(nq + nv, nv));
        S out = 0.0;
        for (std::size_t i = 0; i < nv; ++i) out += w[i] * qdd[i];
        return out;
      };
      CHECK(rel_err(ad::grad(f, x).gradient, ad::finite_diff_gradient_relative(f, x)) < 1e-5);
    }
  }
}

TEST_CASE("one pendulum step differentiates with respect to the link length") {
  const auto tree = testing::load("pendulum3.json");
  auto f = [&](const auto& th) {
    using S = typename std::decay_t<decltype(th)>::value_type;
    const auto tr = with_parameters<S>(tree, std::span<const S>(th));
    JointState<S> s = JointState<S>::zero(3, 3);
    s.q = {S(0.4), S(-0.2), S(0.9)};
    const std::vector<S> zero(3, S(0.0));
    s = step(tr, s, std::span<const S>(zero), 0.05);
    return s.qd[0] + s.qd[2];
  };
  const std::vector<double> theta{std::log(2.0), std::log(3.0), std::log(4.0)};
  CHECK(rel_err(ad::grad(f, theta).gradient, ad::finite_diff_gradient_relative(f, theta)) < 1e-5);
}

TEST_CASE("singular articulated inertia is reported") {
  auto tree = testing::load("pendulum.json");
  tree.bodies[0].mass = 0.0;
  tree.refresh();
  CHECK_THROWS_AS(forward_dynamics_aba(tree, std::vector<double>{0.3}, std::vector<double>{0.0}, std::vector<double>{0.0}),
                  SingularInertiaError);
}

TEST_CASE("semi-implicit Euler") {
  const auto tree = testing::load("pendulum.json");
  JointState<double> s = JointState<double>::zero(1, 1);
  const auto same = integrate_semi_implicit(tree, s, std::vector<double>{0.0}, 0.1);
  CHECK(same.q[0] == 0.0);
  CHECK(same.qd[0] == 0.0);
  const auto next = integrate_semi_implicit(tree, s, std::vector<double>{1.0}, 0.1);
  CHECK(next.qd[0] == doctest::Approx(0.1));
  CHECK(next.q[0] == doctest::Approx(0.01));
  CHECK_THROWS_AS(integrate_semi_implicit(tree, s, std::vector<double>{1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("free body drifts linearly without forces") {
  auto tree = load_model(kFloatingDoc);
  tree.gravity = Vec3<double>::zero();
  JointState<double> s = neutral_state(tree);
  s.qd = {0, 0, 0, 0.3, -0.2, 0.1, 0};
  const std::vector<double> tau(7, 0.0);
  const double dt = 1e-3;
  for (int k = 1; k <= 1000; ++k) {
    s = step(tree, s, std::span<const double>(tau), dt);
    CHECK(s.q[0] == doctest::Approx(0.3 * dt * k).epsilon(1e-12));
    CHECK(s.q[1] == doctest::Approx(-0.2 * dt * k).epsilon(1e-12));
    CHECK(s.q[2] == doctest::Approx(0.1 * dt * k).epsilon(1e-12));
  }
}

TEST_CASE("a spinning free body conserves linear momentum") {
  // Single rigid body, no gravity: the world-frame momentum m R (v + w x c)
  // has zero rate of change under the computed accelerations.
  const char* doc = R"({"gravity":[0,0,0],
    "bodies":[{"name":"b","mass":1.5,"com":[0.2,-0.1,0.05],"inertia":[0.2,0.25,0.3,0.01,0.02,0.0]}],
    "joints":[{"name":"f","type":"floating","parent":"world","child":"b"}]})";
  const auto tree = load_model(doc);
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto s = random_state(tree, rng);
    const std::vector<double> zero(6, 0.0);
    const auto a = forward_dynamics_aba(tree, s.q, s.qd, zero);
    const Vec3<double> w(s.qd[0], s.qd[1], s.qd[2]), v(s.qd[3], s.qd[4], s.qd[5]);
    const Vec3<double> wd(a[0], a[1], a[2]), vd(a[3], a[4], a[5]);
    const Vec3<double> c = tree.bodies[0].com;
    const Vec3<double> rate = cross(w, v + cross(w, c)) + vd + cross(wd, c);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(rate[k]) < 1e-12);
  }
}

TEST_CASE("joints keep bodies connected") {
  std::mt19937_64 rng(9);
  const auto tree = testing::load("pendulum3.json");
  for (int t = 0; t < 20; ++t) {
    const auto s = random_state(tree, rng);
    const auto poses = forward_kinematics(tree, s.q);
    for (std::size_t i = 1; i < tree.size(); ++i) {
      const auto& parent = poses[static_cast<std::size_t>(tree.parent(i))];
      const Vec3<double> expect = parent.position + parent.rotation * tree.joints[i].origin_xyz;
      for (int k = 0; k < 3; ++k) CHECK(std::abs(poses[i].position[k] - expect[k]) < 1e-12);
    }
  }
}

TEST_CASE("rollouts") {
  const auto tree = testing::load("pendulum.json");
  JointState<double> s0 = JointState<double>::zero(1, 1);
  s0.q[0] = 0.5;
  CHECK(rollout(tree, s0, {}, 0, {}).states.size() == 1);

  // One second at the coarse step against RK4 at 1e-4.
  RolloutOptions opts;
  opts.dt = 0.05;
  const auto traj = rollout(tree, s0, {}, 20, opts);
  double q = 0.5, w = 0.0;
  const double h = 1e-4;
  auto f = [](double a) { return -g * std::sin(a); };
  for (int k = 0; k < 10000; ++k) {
    const double k1q = w, k1w = f(q);
    const double k2q = w + 0.5 * h * k1w, k2w = f(q + 0.5 * h * k1q);
    const double k3q = w + 0.5 * h * k2w, k3w = f(q + 0.5 * h * k2q);
    const double k4q = w + h * k3w, k4w = f(q + h * k3q);
    q += h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q);
    w += h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w);
  }
  const auto& end = traj.states.back();
  const double err = std::hypot(end.q[0] - q, end.qd[0] - w);
  CHECK(err < 1e-2);

  // Impulse applied once: the second step sees zero force.
  RolloutOptions once;
  once.impulse_once = true;
  const auto kicked = rollout(tree, JointState<double>::zero(1, 1), {{5.0}}, 3, once);
  CHECK(kicked.states[1].tau[0] == 5.0);
  CHECK(kicked.states[2].tau[0] == 0.0);
}

TEST_CASE("rollout gradient with respect to link lengths") {
  const auto tree = testing::load("pendulum3.json");
  auto f = [&](const auto& th) {
    using S = typename std::decay_t<decltype(th)>::value_type;
    const auto tr = with_parameters<S>(tree, std::span<const S>(th));
    JointState<S> s = JointState<S>::zero(3, 3);
    s.q = {S(0.5), S(0.1), S(-0.3)};
    const std::vector<S> zero(3, S(0.0));
    for (int k = 0; k < 20; ++k) s = step(tr, s, std::span<const S>(zero), 0.05);
    return s.q[2];
  };
  const std::vector<double> theta{std::log(1.0), std::log(5.0), std::log(0.5)};
  CHECK(rel_err(ad::grad(f, theta).gradient, ad::finite_diff_gradient_relative(f, theta)) < 1e-4);
}

TEST_CASE("pendulum energy stays bounded under semi-implicit Euler") {
  const auto tree = testing::load("pendulum.json");
  JointState<double> s = JointState<double>::zero(1, 1);
  s.q[0] = 1.0;
  const double e0 = total_energy(tree, s);
  const std::vector<double> zero{0.0};
  double worst = 0.0, worst_first = 0.0, worst_last = 0.0;
  for (int k = 1; k <= 10000; ++k) {
    s = step(tree, s, std::span<const double>(zero), 1e-3);
    const double dev = std::abs(total_energy(tree, s) - e0) / std::abs(e0);
    worst = std::max(worst, dev);
    if (k <= 2000) worst_first = std::max(worst_first, dev);
    if (k > 8000) worst_last = std::max(worst_last, dev);
  }
  CHECK(worst < 1e-2);
  // Oscillating, not drifting: late deviations stay at the early level.
  CHECK(worst_last < 1.5 * worst_first);
}

TEST_CASE("trajectory CSV layout") {
  const auto tree = testing::load("cartpole.json");
  const auto traj = rollout(tree, JointState<double>::zero(2, 2), {}, 2, {});
  std::ostringstream out;
  write_trajectory_csv(out, tree, traj, {{"u", {1.0, 2.0, 3.0}}});
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "t,q0,q1,qd0,qd1,qdd0,qdd1,tau0,tau1,body_cart_x,body_cart_y,body_cart_z,body_pole_x,body_pole_y,body_pole_z,u");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 3);
}
