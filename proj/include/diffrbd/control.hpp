#pragma once

// iLQR trajectory optimization over the embedded dynamics, receding-horizon
// MPC, and the adaptive loop that refits the model between control phases.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "estimation.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace diffrbd {

/// c(x, u) = w_x ||x - x*||^2 + w_u ||u||^2; the terminal state pays w_x ||x_H - x*||^2.
/// Optional per-dimension `state_scale` s_i turns the state term into sum s_i (x_i - x*_i)^2.
struct QuadraticCost {
  std::vector<double> goal;
  double w_x = 1.0;
  double w_u = 1e-4;
  std::vector<double> state_scale;

  double scale(std::size_t i) const { return state_scale.empty() ? 1.0 : state_scale[i]; }

  double stage(std::span<const double> x, std::span<const double> u) const {
    return w_x * state_term(x) + w_u * std::inner_product(u.begin(), u.end(), u.begin(), 0.0);
  }
  double terminal(std::span<const double> x) const { return w_x * state_term(x); }

 private:
  double state_term(std::span<const double> x) const {
    if (x.size() != goal.size()) throw std::invalid_argument("state and goal differ in dimension");
    double s = 0.0;
    if (!state_scale.empty() && state_scale.size() != goal.size())
      throw std::invalid_argument("state scale and goal differ in dimension");
    for (std::size_t i = 0; i < x.size(); ++i) s += scale(i) * (x[i] - goal[i]) * (x[i] - goal[i]);
    return s;
  }
};

struct ControlBounds {
  std::vector<double> lower;
  std::vector<double> upper;

  static ControlBounds uniform(std::size_t n, double lo = -200.0, double hi = 200.0) {
    if (!(lo < hi)) throw std::invalid_argument("control bounds need lower < upper");
    return {std::vector<double>(n, lo), std::vector<double>(n, hi)};
  }

  void validate(std::size_t n) const {
    if (lower.size() != n || upper.size() != n) throw std::invalid_argument("control bounds have the wrong dimension");
    for (std::size_t i = 0; i < n; ++i)
      if (!(lower[i] < upper[i])) throw std::invalid_argument("control bounds need lower < upper");
  }

  double clamp(std::size_t i, double u) const { return std::clamp(u, lower[i], upper[i]); }
};

struct Linearization {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  std::vector<double> next;
};

/// Jacobians of x' = f(x, u) with respect to x and u, by reverse mode.
inline Linearization linearize_dynamics(const KinematicTree<ad::Var>& model, const SystemSpec& spec,
                                        std::span<const double> x, std::span<const double> u) {
  const std::size_t n = x.size();
  const std::size_t m = u.size();
  std::vector<double> xu(x.begin(), x.end());
  xu.insert(xu.end(), u.begin(), u.end());
  const auto jac = ad::jacobian(
      [&](const std::vector<ad::Var>& in) {
        return spec.transition(model, std::span<const ad::Var>(in.data(), n), std::span<const ad::Var>(in.data() + n, m));
      },
      xu);
  Linearization lin;
  lin.A.resize(static_cast<Eigen::Index>(jac.values.size()), static_cast<Eigen::Index>(n));
  lin.B.resize(static_cast<Eigen::Index>(jac.values.size()), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < jac.values.size(); ++r) {
    for (std::size_t c = 0; c < n; ++c) lin.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = jac(r, c);
    for (std::size_t c = 0; c < m; ++c) lin.B(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = jac(r, n + c);
  }
  lin.next = jac.values;
  return lin;
}

inline Linearization linearize_dynamics(const KinematicTree<double>& tree, const SystemSpec& spec,
                                        std::span<const double> x, std::span<const double> u) {
  return linearize_dynamics(cast_tree<ad::Var>(tree), spec, x, u);
}

struct IlqrOptions {
  int max_iterations = 100;
  double relative_tolerance = 1e-6;
  double lambda_initial = 1e-6;
  double lambda_max = 1e10;
  /// Line-search scales 1, 1/2, ..., 2^-(line_search_steps - 1).
  int line_search_steps = 11;
};

enum class IlqrStatus {
  Converged,
  IterationLimit,
  RegularizationFailed,
  NonFinite,
};

inline const char* to_string(IlqrStatus s) {
  switch (s) {
    case IlqrStatus::Converged:
      return "converged";
    case IlqrStatus::IterationLimit:
      return "iteration_limit";
    case IlqrStatus::RegularizationFailed:
      return "regularization_failed";
    case IlqrStatus::NonFinite:
      return "non_finite";
  }
  return "unknown";
}

struct IlqrResult {
  /// x_0 .. x_H.
  std::vector<std::vector<double>> states;
  /// u_0 .. u_{H-1}.
  std::vector<std::vector<double>> controls;
  double cost = 0.0;
  /// Total cost of the initial rollout followed by every accepted iteration.
  std::vector<double> cost_history;
  int iterations = 0;
  IlqrStatus status = IlqrStatus::IterationLimit;
  bool converged() const { return status == IlqrStatus::Converged; }
};

namespace detail {

struct Rollout {
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> u;
  double cost = std::numeric_limits<double>::infinity();
};

inline bool finite_vector(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
}

// Rolls out u_k = clamp(ubar_k + alpha k_k + K_k (x_k - xbar_k)). Empty gains
// replay `ubar` (clamped). A dynamics failure yields infinite cost.
inline Rollout forward_pass(const KinematicTree<double>& tree, const SystemSpec& spec, const QuadraticCost& cost,
                            const ControlBounds& bounds, const std::vector<double>& x0,
                            const std::vector<std::vector<double>>& xbar, const std::vector<std::vector<double>>& ubar,
                            const std::vector<Eigen::VectorXd>& kff, const std::vector<Eigen::MatrixXd>& Kfb,
                            double alpha) {
  Rollout r;
  const std::size_t H = ubar.size();
  r.x.reserve(H + 1);
  r.u.reserve(H);
  r.x.push_back(x0);
  double total = 0.0;
  try {
    for (std::size_t k = 0; k < H; ++k) {
      std::vector<double> u = ubar[k];
      if (!kff.empty()) {
        Eigen::VectorXd dx(static_cast<Eigen::Index>(x0.size()));
        for (std::size_t i = 0; i < x0.size(); ++i) dx(static_cast<Eigen::Index>(i)) = r.x[k][i] - xbar[k][i];
        const Eigen::VectorXd du = alpha * kff[k] + Kfb[k] * dx;
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += du(static_cast<Eigen::Index>(i));
      }
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = bounds.clamp(i, u[i]);
      total += cost.stage(r.x[k], u);
      r.x.push_back(spec.transition(tree, std::span<const double>(r.x[k]), std::span<const double>(u)));
      r.u.push_back(std::move(u));
      if (!finite_vector(r.x.back())) return Rollout{};
    }
    total += cost.terminal(r.x.back());
  } catch (const std::domain_error&) {
    return Rollout{};
  }
  if (!std::isfinite(total)) return Rollout{};
  r.cost = total;
  return r;
}

}  // namespace detail

/// Clamped iLQR from x0 with horizon H = u_init.size().
inline IlqrResult ilqr(const KinematicTree<double>& tree, const SystemSpec& spec, const QuadraticCost& cost,
                       const std::vector<double>& x0, const std::vector<std::vector<double>>& u_init,
                       const ControlBounds& bounds, const IlqrOptions& opts = {}) {
  const std::size_t H = u_init.size();
  const std::size_t n = spec.state_dim();
  const std::size_t m = spec.control_dim();
  if (H < 1) throw std::invalid_argument("ilqr: horizon must be at least 1");
  if (x0.size() != n) throw std::invalid_argument("ilqr: initial state has the wrong dimension");
  if (cost.goal.size() != n) throw std::invalid_argument("ilqr: goal has the wrong dimension");
  bounds.validate(m);
  for (const auto& u : u_init) {
    if (u.size() != m) throw std::invalid_argument("ilqr: initial control has the wrong dimension");
    for (std::size_t i = 0; i < m; ++i)
      if (u[i] < bounds.lower[i] || u[i] > bounds.upper[i]) throw std::invalid_argument("ilqr: initial controls violate the bounds");
  }

  IlqrResult res;
  detail::Rollout cur = detail::forward_pass(tree, spec, cost, bounds, x0, {}, u_init, {}, {}, 0.0);
  if (!std::isfinite(cur.cost)) {
    res.status = IlqrStatus::NonFinite;
    res.states.assign(1, x0);
    res.controls = u_init;
    res.cost = std::numeric_limits<double>::infinity();
    return res;
  }
  res.cost_history.push_back(cur.cost);

  const KinematicTree<ad::Var> model = cast_tree<ad::Var>(tree);
  const auto N = static_cast<Eigen::Index>(n);
  const auto M = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd lxx = Eigen::MatrixXd::Zero(N, N);
  for (std::size_t i = 0; i < n; ++i) lxx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 2.0 * cost.w_x * cost.scale(i);
  const Eigen::MatrixXd luu = 2.0 * cost.w_u * Eigen::MatrixXd::Identity(M, M);
  auto gradient_x = [&](const std::vector<double>& x) {
    Eigen::VectorXd g(N);
    for (std::size_t i = 0; i < n; ++i) g(static_cast<Eigen::Index>(i)) = 2.0 * cost.w_x * cost.scale(i) * (x[i] - cost.goal[i]);
    return g;
  };

  std::vector<Eigen::MatrixXd> A(H), B(H), Kfb(H);
  std::vector<Eigen::VectorXd> kff(H);
  double lambda = opts.lambda_initial;
  bool relinearize = true;
  res.status = IlqrStatus::IterationLimit;

  for (int it = 0; it < opts.max_iterations;) {
    if (relinearize) {
      try {
        for (std::size_t k = 0; k < H; ++k) {
          Linearization lin = linearize_dynamics(model, spec, cur.x[k], cur.u[k]);
          A[k] = std::move(lin.A);
          B[k] = std::move(lin.B);
        }
      } catch (const std::domain_error&) {
        res.status = IlqrStatus::NonFinite;
        break;
      }
      relinearize = false;
    }

    // Backward pass.
    bool backward_ok = true;
    Eigen::VectorXd Vx = gradient_x(cur.x[H]);
    Eigen::MatrixXd Vxx = lxx;
    double ff_norm = 0.0;
    for (std::size_t k = H; k-- > 0;) {
      Eigen::VectorXd lu(M);
      for (std::size_t i = 0; i < m; ++i) lu(static_cast<Eigen::Index>(i)) = 2.0 * cost.w_u * cur.u[k][i];
      const Eigen::VectorXd Qx = gradient_x(cur.x[k]) + A[k].transpose() * Vx;
      const Eigen::VectorXd Qu = lu + B[k].transpose() * Vx;
      const Eigen::MatrixXd Qxx = lxx + A[k].transpose() * Vxx * A[k];
      const Eigen::MatrixXd Qux = B[k].transpose() * Vxx * A[k];
      const Eigen::MatrixXd Quu = luu + B[k].transpose() * Vxx * B[k];
      const Eigen::MatrixXd Quu_reg = Quu + lambda * Eigen::MatrixXd::Identity(M, M);
      Eigen::LLT<Eigen::MatrixXd> llt(Quu_reg);
      if (llt.info() != Eigen::Success) {
        backward_ok = false;
        break;
      }
      kff[k] = -llt.solve(Qu);
      Kfb[k] = -llt.solve(Qux);
      ff_norm = std::max(ff_norm, kff[k].cwiseAbs().maxCoeff());
      Vx = Qx + Kfb[k].transpose() * Quu * kff[k] + Kfb[k].transpose() * Qu + Qux.transpose() * kff[k];
      Vxx = Qxx + Kfb[k].transpose() * Quu * Kfb[k] + Kfb[k].transpose() * Qux + Qux.transpose() * Kfb[k];
      Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
    }
    if (!backward_ok) {
      lambda *= 10.0;
      if (lambda > opts.lambda_max) {
        res.status = IlqrStatus::RegularizationFailed;
        break;
      }
      continue;
    }
    if (ff_norm < 1e-12) {
      res.status = IlqrStatus::Converged;
      break;
    }

    // Forward line search: accept the first scale that lowers the cost.
    detail::Rollout trial;
    double alpha = 1.0;
    for (int ls = 0; ls < opts.line_search_steps; ++ls, alpha *= 0.5) {
      trial = detail::forward_pass(tree, spec, cost, bounds, x0, cur.x, cur.u, kff, Kfb, alpha);
      if (trial.cost < cur.cost) break;
    }
    if (!(trial.cost < cur.cost)) {
      lambda *= 10.0;
      if (lambda > opts.lambda_max) {
        // No descent at any regularization: a (bound-constrained) local optimum.
        res.status = IlqrStatus::Converged;
        break;
      }
      continue;
    }
    const double improvement = (cur.cost - trial.cost) / std::max(cur.cost, 1e-300);
    cur = std::move(trial);
    res.cost_history.push_back(cur.cost);
    ++it;
    res.iterations = it;
    relinearize = true;
    lambda = std::max(lambda * 0.5, opts.lambda_initial);
    if (improvement < opts.relative_tolerance) {
      res.status = IlqrStatus::Converged;
      break;
    }
  }

  res.states = std::move(cur.x);
  res.controls = std::move(cur.u);
  res.cost = cur.cost;
  return res;
}

struct MpcStepResult {
  std::vector<double> u;
  /// Solution shifted by one step with the last control repeated.
  std::vector<std::vector<double>> warm_start;
  IlqrResult solve;
};

/// Solves an H-step problem from x and returns its first control.
inline MpcStepResult mpc_step(const KinematicTree<double>& tree, const SystemSpec& spec, const QuadraticCost& cost,
                              const std::vector<double>& x, int horizon, std::vector<std::vector<double>> warm,
                              const ControlBounds& bounds, const IlqrOptions& opts = {}) {
  if (horizon < 1) throw std::invalid_argument("mpc_step: horizon must be at least 1");
  const std::size_t H = static_cast<std::size_t>(horizon);
  const std::size_t m = spec.control_dim();
  if (warm.size() > H) warm.resize(H);
  while (warm.size() < H) warm.push_back(warm.empty() ? std::vector<double>(m, 0.0) : warm.back());
  for (auto& u : warm)
    for (std::size_t i = 0; i < u.size() && i < m; ++i) u[i] = bounds.clamp(i, u[i]);

  MpcStepResult out;
  out.solve = ilqr(tree, spec, cost, x, warm, bounds, opts);
  out.u = out.solve.controls.front();
  out.warm_start.assign(out.solve.controls.begin() + 1, out.solve.controls.end());
  out.warm_start.push_back(out.solve.controls.back());
  return out;
}

struct FitEvent {
  int episode = 0;
  int step = 0;
  std::vector<double> theta_before;
  std::vector<double> theta_after;
  double loss_before = 0.0;
  double loss_after = 0.0;
  int iterations = 0;
  std::string status;
};

struct EpisodeLog {
  int episode = 0;
  double cumulative_cost = 0.0;
  std::vector<FitEvent> fit_events;
  /// Environment states x_0 .. x_T (joint space).
  std::vector<JointState<double>> states;
  /// Applied controls u_0 .. u_{T-1}.
  std::vector<std::vector<double>> controls;
  /// Observed transitions of this episode.
  ReplayBuffer transitions;
  /// Per-dimension max |f_theta(x, u) - x'| over this episode's transitions,
  /// using the model as it was before this episode's fits.
  std::vector<double> prediction_error;
  std::string diagnostic;
};

struct RunLog {
  std::vector<EpisodeLog> episodes;
  std::vector<double> theta_final;
};

struct AdaptiveMpcOptions {
  int episodes = 3;
  int steps = 140;
  int horizon = 20;
  /// Fit period during the first episode; later episodes fit once at their end.
  int first_episode_fit_interval = 50;
  std::vector<std::string> actuated_joints{"slider"};
  double dt = 0.05;
  int substeps = 1;
  ControlBounds bounds = ControlBounds::uniform(1);
  QuadraticCost cost;
  IlqrOptions ilqr;
  OptimizeOptions fit{.max_iterations = 10};
  /// Initial joint state of every episode; zero if empty.
  std::vector<double> initial_q;
  /// Std. dev. of seeded noise added once per run to initial_q.
  double initial_noise = 0.0;
  /// Half-width of the seeded uniform controls that warm-start the first
  /// solve of every episode (drawn once per run). Breaks the symmetry of
  /// resting equilibria, where the embedded linearization has no descent.
  double warm_start_amplitude = 0.0;
  std::uint64_t seed = 0;
};

/// Per-dimension max absolute one-step prediction error of `model` on `buffer`.
inline std::vector<double> prediction_error(const KinematicTree<double>& model, const ReplayBuffer& buffer,
                                            const SystemSpec& spec) {
  std::vector<double> err(spec.state_dim(), 0.0);
  for (const auto& t : buffer) {
    const auto pred = spec.transition(model, std::span<const double>(t.x), std::span<const double>(t.u));
    for (std::size_t d = 0; d < err.size(); ++d) err[d] = std::max(err[d], std::abs(pred[d] - t.x_next[d]));
  }
  return err;
}

/// Adaptive MPC: control `env` with iLQR on `model`, record transitions, and
/// refit the model's free parameters on the schedule. `model` is updated in place.
inline RunLog adaptive_mpc_run(const KinematicTree<double>& env, KinematicTree<double>& model,
                               const AdaptiveMpcOptions& opts) {
  if (env.nq() != model.nq() || env.nv() != model.nv() || env.size() != model.size())
    throw std::invalid_argument("adaptive_mpc_run: environment and model differ in topology");
  const SystemSpec spec = SystemSpec::for_tree(model, opts.actuated_joints, opts.dt, true, opts.substeps);
  if (opts.cost.goal.size() != spec.state_dim()) throw std::invalid_argument("adaptive_mpc_run: goal has the wrong dimension");
  opts.bounds.validate(spec.control_dim());

  std::vector<double> q0 = opts.initial_q;
  if (q0.empty()) q0.assign(static_cast<std::size_t>(env.nq()), 0.0);
  if (q0.size() != static_cast<std::size_t>(env.nq())) throw std::invalid_argument("adaptive_mpc_run: initial_q has the wrong dimension");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  if (opts.initial_noise > 0.0)
    for (auto& q : q0) q += opts.initial_noise * noise(rng);
  std::vector<std::vector<double>> initial_warm;
  if (opts.warm_start_amplitude > 0.0) {
    std::uniform_real_distribution<double> uni(-opts.warm_start_amplitude, opts.warm_start_amplitude);
    initial_warm.assign(static_cast<std::size_t>(opts.horizon), std::vector<double>(spec.control_dim(), 0.0));
    for (auto& u : initial_warm)
      for (auto& v : u) v = uni(rng);
  }

  RunLog log;
  for (int e = 0; e < opts.episodes; ++e) {
    EpisodeLog ep;
    ep.episode = e + 1;
    JointState<double> s = JointState<double>::zero(env.nq(), env.nv());
    s.q = q0;
    ep.states.push_back(s);
    std::vector<std::vector<double>> warm = initial_warm;
    const KinematicTree<double> model_at_start = model;

    auto fit = [&](int step) {
      FitEvent ev;
      ev.episode = e + 1;
      ev.step = step;
      const FitResult r = fit_dynamics(model, ep.transitions, spec, opts.fit);
      ev.theta_before = r.theta_before;
      ev.theta_after = r.theta_after;
      ev.loss_before = r.loss_before;
      ev.loss_after = r.loss_after;
      ev.iterations = r.optimizer.iterations;
      ev.status = to_string(r.optimizer.status);
      ep.fit_events.push_back(std::move(ev));
    };

    try {
      for (int t = 0; t < opts.steps; ++t) {
        const std::vector<double> x = spec.embedding.embed(s);
        const MpcStepResult r = mpc_step(model, spec, opts.cost, x, opts.horizon, std::move(warm), opts.bounds, opts.ilqr);
        warm = r.warm_start;
        const std::vector<double> tau = spec.actuation.to_tau(std::span<const double>(r.u), env.nv());
        const double h = opts.dt / opts.substeps;
        for (int k = 0; k < opts.substeps; ++k) s = step(env, s, std::span<const double>(tau), h);
        const std::vector<double> x_next = spec.embedding.embed(s);
        ep.cumulative_cost += opts.cost.stage(x, r.u);
        ep.transitions.add({x, r.u, x_next});
        ep.states.push_back(s);
        ep.controls.push_back(r.u);
        const bool last = t + 1 == opts.steps;
        if (e == 0 && opts.first_episode_fit_interval > 0 && (t + 1) % opts.first_episode_fit_interval == 0 && !last)
          fit(t + 1);
      }
      ep.prediction_error = prediction_error(model_at_start, ep.transitions, spec);
      fit(opts.steps);
    } catch (const std::exception& ex) {
      ep.diagnostic = ex.what();
    }
    log.episodes.push_back(std::move(ep));
  }
  log.theta_final = get_parameters(model);
  return log;
}

}  // namespace diffrbd
