#pragma once

// System identification: fit the free physical parameters of a tree to
// observed one-step transitions or to H-step state predictions.

#include <algorithm>
#include <span>
#include <exception>
#include <stdexcept>
#include <thread>
#include <vector>

#include "autodiff.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace diffrbd {

struct Transition {
  std::vector<double> x;
  std::vector<double> u;
  std::vector<double> x_next;
};

/// Insertion-ordered store of observed transitions.
class ReplayBuffer {
 public:
  void add(Transition t) { items_.push_back(std::move(t)); }
  void clear() { items_.clear(); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Transition> items_;
};

/// Ground-truth state at time t and at time t + H.
struct StatePair {
  JointState<double> start;
  JointState<double> target;
};

struct LossAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

namespace detail {

// Sums per-sample losses and their parameter gradients. Each worker owns its
// tape; per-sample results are combined in sample order so the result does
// not depend on the thread count.
template <class SampleLoss>
LossAndGradient accumulate_loss(const KinematicTree<double>& base, std::span<const double> theta, std::size_t count,
                                const SampleLoss& sample_loss, unsigned threads) {
  const std::size_t k = theta.size();
  std::vector<double> values(count, 0.0);
  std::vector<double> grads(count * k, 0.0);

  auto work = [&](std::size_t begin, std::size_t end) {
    ad::Tape tape;
    std::vector<ad::Var> th;
    th.reserve(k);
    for (double t : theta) th.push_back(ad::Var::leaf(tape, t));
    const KinematicTree<ad::Var> tree = with_parameters<ad::Var>(base, std::span<const ad::Var>(th));
    const std::size_t mark = tape.size();
    for (std::size_t i = begin; i < end; ++i) {
      const ad::Var loss = sample_loss(tree, i);
      values[i] = loss.value();
      if (loss.tracked()) {
        const auto adj = tape.adjoints(loss.index());
        for (std::size_t p = 0; p < k; ++p) grads[i * k + p] = adj[static_cast<std::size_t>(th[p].index())];
      }
      tape.truncate(mark);
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads == 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    // Worker failures (e.g. a singular model) are rethrown on the caller's thread.
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(count, b + chunk);
      if (b < e) pool.emplace_back([&, t, b, e] {
        try {
          work(b, e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  LossAndGradient out;
  out.gradient.assign(k, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    out.value += values[i];
    for (std::size_t p = 0; p < k; ++p) out.gradient[p] += grads[i * k + p];
  }
  return out;
}

}  // namespace detail

/// Sum over transitions of ||f_theta(x, u) - x'||^2 and its gradient in theta.
inline LossAndGradient prediction_loss(const KinematicTree<double>& tree, std::span<const double> theta,
                                       const ReplayBuffer& buffer, const SystemSpec& spec, unsigned threads = 1) {
  if (buffer.empty()) throw std::invalid_argument("prediction_loss: empty replay buffer");
  if (theta.size() != tree.bindings.size()) throw std::invalid_argument("prediction_loss: parameter dimension mismatch");
  auto sample = [&](const KinematicTree<ad::Var>& model, std::size_t i) {
    const Transition& t = buffer[i];
    const std::vector<ad::Var> x(t.x.begin(), t.x.end());
    const std::vector<ad::Var> u(t.u.begin(), t.u.end());
    const auto pred = spec.transition(model, std::span<const ad::Var>(x), std::span<const ad::Var>(u));
    ad::Var loss = 0.0;
    for (std::size_t d = 0; d < pred.size(); ++d) loss += ad::square(pred[d] - t.x_next[d]);
    return loss;
  };
  return detail::accumulate_loss(tree, theta, buffer.size(), sample, threads);
}

/// Plain-double evaluation of the one-step prediction loss.
inline double prediction_loss_value(const KinematicTree<double>& tree, const ReplayBuffer& buffer, const SystemSpec& spec) {
  double loss = 0.0;
  for (const auto& t : buffer) {
    const auto pred = spec.transition(tree, std::span<const double>(t.x), std::span<const double>(t.u));
    for (std::size_t d = 0; d < pred.size(); ++d) loss += (pred[d] - t.x_next[d]) * (pred[d] - t.x_next[d]);
  }
  return loss;
}

/// Sum over pairs of ||rollout_H([q, q'](t)) - [q, q'](t + H)||^2 with zero
/// forces, and its gradient in theta.
inline LossAndGradient horizon_prediction_loss(const KinematicTree<double>& tree, std::span<const double> theta,
                                               const std::vector<StatePair>& pairs, int horizon, double dt,
                                               unsigned threads = 1) {
  if (horizon < 1) throw std::invalid_argument("horizon_prediction_loss: horizon must be at least 1");
  if (pairs.empty()) throw std::invalid_argument("horizon_prediction_loss: no state pairs");
  if (theta.size() != tree.bindings.size()) throw std::invalid_argument("horizon_prediction_loss: parameter dimension mismatch");
  auto sample = [&](const KinematicTree<ad::Var>& model, std::size_t i) {
    const StatePair& p = pairs[i];
    JointState<ad::Var> s = JointState<ad::Var>::zero(model.nq(), model.nv());
    std::copy(p.start.q.begin(), p.start.q.end(), s.q.begin());
    std::copy(p.start.qd.begin(), p.start.qd.end(), s.qd.begin());
    const std::vector<ad::Var> zero(static_cast<std::size_t>(model.nv()), ad::Var(0.0));
    for (int h = 0; h < horizon; ++h) s = step(model, s, std::span<const ad::Var>(zero), dt);
    ad::Var loss = 0.0;
    for (std::size_t d = 0; d < s.q.size(); ++d) loss += ad::square(s.q[d] - p.target.q[d]);
    for (std::size_t d = 0; d < s.qd.size(); ++d) loss += ad::square(s.qd[d] - p.target.qd[d]);
    return loss;
  };
  return detail::accumulate_loss(tree, theta, pairs.size(), sample, threads);
}

/// Generates (state_t, state_{t+H}) pairs by unforced rollouts of `tree`.
inline std::vector<StatePair> make_state_pairs(const KinematicTree<double>& tree, const std::vector<JointState<double>>& starts,
                                               int horizon, double dt) {
  std::vector<StatePair> pairs;
  pairs.reserve(starts.size());
  RolloutOptions opts;
  opts.dt = dt;
  opts.compute_poses = false;
  for (const auto& s : starts) {
    const auto traj = rollout(tree, s, {}, horizon, opts);
    StatePair p;
    p.start = s;
    p.target = traj.states.back();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

struct FitResult {
  std::vector<double> theta_before;
  std::vector<double> theta_after;
  double loss_before = 0.0;
  double loss_after = 0.0;
  OptimizeResult optimizer;
};

namespace detail {

template <class LossFn>
FitResult fit_with(KinematicTree<double>& tree, const LossFn& loss, const OptimizeOptions& opts) {
  FitResult fit;
  fit.theta_before = get_parameters(tree);
  Objective f = [&](const std::vector<double>& theta, std::vector<double>& grad) {
    LossAndGradient lg = loss(std::span<const double>(theta));
    grad = std::move(lg.gradient);
    return lg.value;
  };
  fit.optimizer = lbfgs_minimize(f, fit.theta_before, opts);
  fit.loss_before = fit.optimizer.history.empty() ? fit.optimizer.value : fit.optimizer.history.front().value;
  fit.loss_after = fit.optimizer.value;
  fit.theta_after = fit.optimizer.x;
  set_parameters(tree, fit.theta_after);
  return fit;
}

}  // namespace detail

/// Fits the free parameters to one-step transitions; updates `tree` in place.
inline FitResult fit_dynamics(KinematicTree<double>& tree, const ReplayBuffer& buffer, const SystemSpec& spec,
                              const OptimizeOptions& opts = {}, unsigned threads = 1) {
  if (buffer.empty()) throw std::invalid_argument("fit_dynamics: no transitions");
  const KinematicTree<double> base = tree;
  return detail::fit_with(
      tree, [&](std::span<const double> th) { return prediction_loss(base, th, buffer, spec, threads); }, opts);
}

/// Fits the free parameters to H-step state pairs; updates `tree` in place.
inline FitResult fit_dynamics(KinematicTree<double>& tree, const std::vector<StatePair>& pairs, int horizon, double dt,
                              const OptimizeOptions& opts = {}, unsigned threads = 1) {
  if (pairs.empty()) throw std::invalid_argument("fit_dynamics: no state pairs");
  const KinematicTree<double> base = tree;
  return detail::fit_with(
      tree, [&](std::span<const double> th) { return horizon_prediction_loss(base, th, pairs, horizon, dt, threads); },
      opts);
}

/// Uniformly sampled state sequences (spacing dt), e.g. consecutive observations.
using StateTrajectory = std::vector<JointState<double>>;

/// Unforced rollouts of `steps` steps from each start; each trajectory holds steps + 1 states.
inline std::vector<StateTrajectory> make_state_trajectories(const KinematicTree<double>& tree,
                                                            const std::vector<JointState<double>>& starts, int steps,
                                                            double dt) {
  if (steps < 1) throw std::invalid_argument("make_state_trajectories: steps must be >= 1");
  RolloutOptions opts;
  opts.dt = dt;
  opts.compute_poses = false;
  std::vector<StateTrajectory> out;
  out.reserve(starts.size());
  for (const auto& s : starts) out.push_back(rollout(tree, s, {}, steps, opts).states);
  return out;
}

/// Non-overlapping windows (t, t + h), t = 0, h, 2h, ... of every trajectory.
inline std::vector<StatePair> pairs_at_horizon(const std::vector<StateTrajectory>& trajectories, int horizon) {
  if (horizon < 1) throw std::invalid_argument("pairs_at_horizon: horizon must be >= 1");
  const auto h = static_cast<std::size_t>(horizon);
  std::vector<StatePair> pairs;
  for (const auto& traj : trajectories)
    for (std::size_t t = 0; t + h < traj.size(); t += h) pairs.push_back({traj[t], traj[t + h]});
  return pairs;
}

/// 1, 2, 5, 10, 20, 50, ... below `horizon`, then `horizon` itself.
inline std::vector<int> horizon_schedule(int horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon_schedule: horizon must be >= 1");
  std::vector<int> out;
  for (int decade = 1; decade < horizon; decade *= 10)
    for (int m : {1, 2, 5})
      if (m * decade < horizon) out.push_back(m * decade);
  out.push_back(horizon);
  return out;
}

struct StagedFitResult {
  FitResult fit;  // losses measured at the final horizon; optimizer is the last stage
  std::vector<int> horizons;
  std::vector<FitResult> stages;
  int total_iterations() const {
    int n = 0;
    for (const auto& s : stages) n += s.optimizer.iterations;
    return n;
  }
};

/// Horizon continuation: fits to short-horizon windows first and warm-starts each
/// longer horizon from the previous optimum. Long chaotic rollouts make the
/// H-step loss highly multimodal; the one-step loss is nearly convex in the
/// parameters, so the schedule keeps the iterate in the right basin.
inline StagedFitResult fit_dynamics_staged(KinematicTree<double>& tree, const std::vector<StateTrajectory>& trajectories,
                                           int horizon, double dt, const OptimizeOptions& opts = {},
                                           unsigned threads = 1) {
  const auto final_pairs = pairs_at_horizon(trajectories, horizon);
  if (final_pairs.empty()) throw std::invalid_argument("fit_dynamics_staged: trajectories shorter than the horizon");
  StagedFitResult out;
  out.horizons = horizon_schedule(horizon);
  out.fit.theta_before = get_parameters(tree);
  out.fit.loss_before = horizon_prediction_loss(tree, out.fit.theta_before, final_pairs, horizon, dt, threads).value;
  for (int h : out.horizons) out.stages.push_back(fit_dynamics(tree, pairs_at_horizon(trajectories, h), h, dt, opts, threads));
  const auto& last = out.stages.back();
  out.fit.theta_after = last.theta_after;
  out.fit.loss_after = last.loss_after;
  out.fit.optimizer = last.optimizer;
  return out;
}

}  // namespace diffrbd
