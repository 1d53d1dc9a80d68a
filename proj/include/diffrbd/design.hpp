#pragma once

// Kinematic robot design: choose DH parameters so that a fixed joint-space
// trajectory traces a target end-effector path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "autodiff.hpp"
#include "dynamics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "spatial.hpp"

namespace diffrbd {

struct DesignProblem {
  int dof = 0;
  std::vector<std::vector<double>> q_trajectory;
  std::vector<Vec3<double>> p_trajectory;
  /// Flat (d, a, alpha) per joint.
  std::vector<double> initial;

  void validate() const {
    if (dof < 1) throw std::invalid_argument("design problem needs at least one joint");
    if (q_trajectory.empty()) throw std::invalid_argument("design problem needs at least one waypoint");
    if (q_trajectory.size() != p_trajectory.size())
      throw std::invalid_argument("joint and end-effector trajectories differ in length");
    for (const auto& q : q_trajectory)
      if (q.size() != static_cast<std::size_t>(dof)) throw std::invalid_argument("joint waypoint has the wrong dimension");
    if (!initial.empty() && initial.size() != static_cast<std::size_t>(3 * dof))
      throw std::invalid_argument("initial DH vector must have 3 entries per joint");
  }
};

/// End-effector positions of the DH arm `R` along a joint trajectory.
template <class S>
std::vector<Vec3<S>> end_effector_path(std::span<const S> R, const std::vector<std::vector<double>>& q_trajectory) {
  const KinematicTree<S> tree = from_dh<S>(dh_from_vector<S>(R));
  std::vector<Vec3<S>> path;
  path.reserve(q_trajectory.size());
  for (const auto& qt : q_trajectory) {
    const std::vector<S> q(qt.begin(), qt.end());
    path.push_back(forward_kinematics(tree, std::span<const S>(q)).back().position);
  }
  return path;
}

/// Sum_t ||KIN(q_t; R) - p_t||^2 for scalar type S.
template <class S>
S design_objective(std::span<const S> R, const DesignProblem& problem) {
  const auto path = end_effector_path<S>(R, problem.q_trajectory);
  S loss = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const Vec3<double>& p = problem.p_trajectory[t];
    loss += squared_norm(path[t] - Vec3<S>(S(p.x), S(p.y), S(p.z)));
  }
  return loss;
}

inline ad::GradResult design_loss(std::span<const double> R, const DesignProblem& problem) {
  if (R.size() != static_cast<std::size_t>(3 * problem.dof)) throw std::invalid_argument("DH vector must have 3 entries per joint");
  return ad::grad([&](const std::vector<ad::Var>& r) { return design_objective<ad::Var>(std::span<const ad::Var>(r), problem); },
                  R);
}

/// Root-mean-square task-space error of the path realized by `R`.
inline double path_rmse(std::span<const double> R, const DesignProblem& problem) {
  const double loss = design_objective<double>(R, problem);
  return std::sqrt(loss / static_cast<double>(problem.p_trajectory.size()));
}

/// Starting point when no prior design is known: d = 0, a = path extent / N,
/// alpha = 0, each perturbed by N(0, sigma^2) noise.
inline std::vector<double> blind_initialization(const DesignProblem& problem, std::uint64_t seed, double sigma = 0.1) {
  double extent = 0.0;
  for (const auto& p : problem.p_trajectory) extent = std::max(extent, std::sqrt(squared_norm(p)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> R(static_cast<std::size_t>(3 * problem.dof), 0.0);
  for (int i = 0; i < problem.dof; ++i) {
    R[3 * i] = noise(rng);
    R[3 * i + 1] = extent / problem.dof + noise(rng);
    R[3 * i + 2] = noise(rng);
  }
  return R;
}

struct DesignOptions {
  OptimizeOptions optimizer{.max_iterations = 500, .g_tol = 1e-12};
  std::uint64_t seed = 0;
};

struct DesignResult {
  std::vector<double> R;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double rmse = 0.0;
  OptimizeResult optimizer;
};

inline DesignResult design_arm(const DesignProblem& problem, const DesignOptions& opts = {}) {
  problem.validate();
  const std::vector<double> R0 = problem.initial.empty() ? blind_initialization(problem, opts.seed) : problem.initial;
  Objective f = [&](const std::vector<double>& R, std::vector<double>& g) {
    auto r = design_loss(R, problem);
    g = std::move(r.gradient);
    return r.value;
  };
  DesignResult out;
  out.optimizer = lbfgs_minimize(f, R0, opts.optimizer);
  out.R = out.optimizer.x;
  out.initial_loss = out.optimizer.history.empty() ? out.optimizer.value : out.optimizer.history.front().value;
  out.final_loss = out.optimizer.value;
  out.rmse = path_rmse(out.R, problem);
  return out;
}

}  // namespace diffrbd
