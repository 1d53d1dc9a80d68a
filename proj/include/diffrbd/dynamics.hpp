#pragma once

// Rigid-body algorithms over a KinematicTree: forward kinematics, the
// articulated-body algorithm (forward dynamics), recursive Newton-Euler
// (inverse dynamics, bias forces, mass matrix), semi-implicit Euler
// integration and multi-step rollouts. All of them are templates over the
// scalar type and therefore differentiable with ad::Var.

#include <array>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "model.hpp"
#include "spatial.hpp"

namespace diffrbd {

/// Raised when the articulated inertia seen by a joint is not positive
/// definite (degenerate model).
class SingularInertiaError : public ad::DomainError {
 public:
  using ad::DomainError::DomainError;
};

template <class S>
struct JointState {
  std::vector<S> q;
  std::vector<S> qd;
  std::vector<S> qdd;
  std::vector<S> tau;

  static JointState zero(int nq, int nv) {
    JointState s;
    s.q.assign(static_cast<std::size_t>(nq), S(0.0));
    s.qd.assign(static_cast<std::size_t>(nv), S(0.0));
    s.qdd.assign(static_cast<std::size_t>(nv), S(0.0));
    s.tau.assign(static_cast<std::size_t>(nv), S(0.0));
    return s;
  }
};

/// Zero state with identity quaternions in every floating joint.
template <class S>
JointState<S> neutral_state(const KinematicTree<S>& tree) {
  JointState<S> s = JointState<S>::zero(tree.nq(), tree.nv());
  for (const auto& j : tree.joints)
    if (j.type == JointType::Floating) s.q[static_cast<std::size_t>(j.q_index + 3)] = S(1.0);
  return s;
}

template <class S>
struct Pose {
  Mat3<S> rotation = Mat3<S>::identity();
  Vec3<S> position = Vec3<S>::zero();
};

/// Columns of the motion subspace S_i of a joint, in the joint (child) frame.
template <class S>
struct MotionSubspace {
  std::array<SpatialMotionVector<S>, 6> col{};
  int n = 0;
};

template <class S>
MotionSubspace<S> motion_subspace(const Joint<S>& j) {
  MotionSubspace<S> m;
  switch (j.type) {
    case JointType::Revolute:
      m.n = 1;
      m.col[0] = {j.axis, Vec3<S>::zero()};
      break;
    case JointType::Prismatic:
      m.n = 1;
      m.col[0] = {Vec3<S>::zero(), j.axis};
      break;
    case JointType::Fixed:
      break;
    case JointType::Floating:
      m.n = 6;
      for (int k = 0; k < 6; ++k) {
        SpatialMotionVector<S> e;
        e[k] = S(1.0);
        m.col[static_cast<std::size_t>(k)] = e;
      }
      break;
  }
  return m;
}

/// Transform from the joint frame at q = 0 to the moved child frame.
template <class S>
SpatialTransform<S> joint_motion_transform(const Joint<S>& j, std::span<const S> q) {
  const auto qi = static_cast<std::size_t>(j.q_index);
  switch (j.type) {
    case JointType::Revolute:
      return SpatialTransform<S>::rotate(axis_angle(j.axis, q[qi]));
    case JointType::Prismatic:
      return SpatialTransform<S>::translate(q[qi] * j.axis);
    case JointType::Fixed:
      return SpatialTransform<S>::identity();
    case JointType::Floating: {
      const Mat3<S> R = quat_matrix(q[qi + 3], q[qi + 4], q[qi + 5], q[qi + 6]);
      return SpatialTransform<S>::from_pose(R, Vec3<S>(q[qi], q[qi + 1], q[qi + 2]));
    }
  }
  return SpatialTransform<S>::identity();
}

/// X_{lambda(i) -> i} for every body.
template <class S>
std::vector<SpatialTransform<S>> parent_transforms(const KinematicTree<S>& tree, std::span<const S> q) {
  if (q.size() != static_cast<std::size_t>(tree.nq())) throw std::invalid_argument("q has the wrong dimension");
  std::vector<SpatialTransform<S>> xup;
  xup.reserve(tree.size());
  for (const auto& j : tree.joints) xup.push_back(compose(joint_motion_transform(j, q), j.origin));
  return xup;
}

/// World -> body transforms for every body.
template <class S>
std::vector<SpatialTransform<S>> world_transforms(const KinematicTree<S>& tree, std::span<const S> q) {
  auto x = parent_transforms(tree, q);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int p = tree.parent(i);
    if (p >= 0) x[i] = compose(x[i], x[static_cast<std::size_t>(p)]);
  }
  return x;
}

/// World pose of every body frame (KIN).
template <class S>
std::vector<Pose<S>> forward_kinematics(const KinematicTree<S>& tree, std::span<const S> q) {
  const auto x0 = world_transforms(tree, q);
  std::vector<Pose<S>> poses(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) poses[i] = {x0[i].pose_rotation(), x0[i].translation};
  return poses;
}

template <class S>
std::vector<Pose<S>> forward_kinematics(const KinematicTree<S>& tree, const std::vector<S>& q) {
  return forward_kinematics(tree, std::span<const S>(q));
}

/// World position of every body's centre of mass.
template <class S>
std::vector<Vec3<S>> com_positions(const KinematicTree<S>& tree, std::span<const S> q) {
  const auto poses = forward_kinematics(tree, q);
  std::vector<Vec3<S>> out(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) out[i] = poses[i].position + poses[i].rotation * tree.bodies[i].com;
  return out;
}

namespace detail {

template <class S>
SpatialMotionVector<S> subspace_times(const MotionSubspace<S>& s, std::span<const S> x, std::size_t offset) {
  SpatialMotionVector<S> out;
  for (int k = 0; k < s.n; ++k) out += x[offset + static_cast<std::size_t>(k)] * s.col[static_cast<std::size_t>(k)];
  return out;
}

// In-place Cholesky solve of the small SPD system D x = b (n <= 6).
template <class S>
void cholesky_solve(std::array<S, 36>& D, int n, std::array<S, 6>& b) {
  auto at = [&](int r, int c) -> S& { return D[static_cast<std::size_t>(6 * r + c)]; };
  for (int j = 0; j < n; ++j) {
    S d = at(j, j);
    for (int k = 0; k < j; ++k) d -= at(j, k) * at(j, k);
    if (!(ad::value_of(d) > 0.0)) throw SingularInertiaError("articulated inertia is singular (degenerate model)");
    const S l = ad::sqrt(d);
    at(j, j) = l;
    for (int i = j + 1; i < n; ++i) {
      S v = at(i, j);
      for (int k = 0; k < j; ++k) v -= at(i, k) * at(j, k);
      at(i, j) = v / l;
    }
  }
  for (int i = 0; i < n; ++i) {
    S v = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) v -= at(i, k) * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = v / at(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    S v = b[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k) v -= at(k, i) * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = v / at(i, i);
  }
}

template <class S>
SpatialMotionVector<S> gravity_acceleration(const Vec3<S>& g) {
  // Uniform gravity enters as a fictitious upward acceleration of the base.
  return {Vec3<S>::zero(), -g};
}

template <class S>
std::vector<SpatialForceVector<S>> external_in_body(const KinematicTree<S>& tree, std::span<const S> q,
                                                    std::span<const SpatialForceVector<S>> f_world) {
  std::vector<SpatialForceVector<S>> out(tree.size());
  if (f_world.empty()) return out;
  if (f_world.size() != tree.size()) throw std::invalid_argument("one external force per body expected");
  const auto x0 = world_transforms(tree, q);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0[i].apply_force(f_world[i]);
  return out;
}

}  // namespace detail

/// Forward dynamics by the articulated-body algorithm: q'' for the given
/// state and generalized forces. `f_ext` (optional) holds one world-frame
/// spatial force per body, taken about the world origin.
template <class S>
std::vector<S> forward_dynamics_aba(const KinematicTree<S>& tree, std::span<const S> q, std::span<const S> qd,
                                    std::span<const S> tau, std::span<const SpatialForceVector<S>> f_ext = {}) {
  const std::size_t n = tree.size();
  if (qd.size() != static_cast<std::size_t>(tree.nv()) || tau.size() != static_cast<std::size_t>(tree.nv()))
    throw std::invalid_argument("qd/tau have the wrong dimension");
  const auto xup = parent_transforms(tree, q);
  const auto fx = detail::external_in_body(tree, q, f_ext);

  std::vector<MotionSubspace<S>> sub(n);
  std::vector<SpatialMotionVector<S>> v(n), c(n), a(n);
  std::vector<Mat6<S>> IA(n);
  std::vector<SpatialForceVector<S>> pA(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Joint<S>& j = tree.joints[i];
    sub[i] = motion_subspace(j);
    const auto vj = detail::subspace_times(sub[i], qd, static_cast<std::size_t>(j.v_index));
    const int p = j.parent;
    v[i] = p >= 0 ? xup[i].apply_motion(v[static_cast<std::size_t>(p)]) + vj : vj;
    c[i] = cross_motion(v[i], vj);
    const SpatialInertia<S> I = tree.bodies[i].spatial_inertia();
    IA[i] = to_matrix(I);
    pA[i] = cross_force(v[i], inertia_apply(I, v[i]));
    if (!f_ext.empty()) pA[i] -= fx[i];
  }

  std::vector<std::array<SpatialForceVector<S>, 6>> U(n);
  std::vector<std::array<S, 36>> D(n);
  std::vector<std::array<S, 6>> u(n);

  for (std::size_t ii = n; ii-- > 0;) {
    const Joint<S>& j = tree.joints[ii];
    const MotionSubspace<S>& s = sub[ii];
    const int nv = s.n;
    for (int k = 0; k < nv; ++k) U[ii][static_cast<std::size_t>(k)] = IA[ii] * s.col[static_cast<std::size_t>(k)];
    for (int r = 0; r < nv; ++r) {
      for (int k = 0; k < nv; ++k)
        D[ii][static_cast<std::size_t>(6 * r + k)] = dot(U[ii][static_cast<std::size_t>(k)], s.col[static_cast<std::size_t>(r)]);
      u[ii][static_cast<std::size_t>(r)] =
          tau[static_cast<std::size_t>(j.v_index + r)] - dot(pA[ii], s.col[static_cast<std::size_t>(r)]);
    }
    if (j.parent < 0) continue;

    // Ia = IA - U D^-1 U^T ; pa = pA + Ia c + U D^-1 u
    Mat6<S> Ia = IA[ii];
    SpatialForceVector<S> pa = pA[ii];
    if (nv > 0) {
      std::array<S, 6> dinv_u = u[ii];
      {
        auto Dc = D[ii];
        detail::cholesky_solve(Dc, nv, dinv_u);
      }
      // Columns of U D^-1.
      std::array<SpatialForceVector<S>, 6> UDinv{};
      for (int col = 0; col < nv; ++col) {
        std::array<S, 6> e{};
        for (int k = 0; k < nv; ++k) e[static_cast<std::size_t>(k)] = S(k == col ? 1.0 : 0.0);
        auto Dc = D[ii];
        detail::cholesky_solve(Dc, nv, e);
        SpatialForceVector<S> acc;
        for (int k = 0; k < nv; ++k) acc += e[static_cast<std::size_t>(k)] * U[ii][static_cast<std::size_t>(k)];
        UDinv[static_cast<std::size_t>(col)] = acc;
      }
      for (int r = 0; r < 6; ++r)
        for (int cc = 0; cc < 6; ++cc) {
          S acc = Ia(r, cc);
          for (int k = 0; k < nv; ++k)
            acc -= UDinv[static_cast<std::size_t>(k)][r] * U[ii][static_cast<std::size_t>(k)][cc];
          Ia(r, cc) = acc;
        }
      for (int k = 0; k < nv; ++k) pa += dinv_u[static_cast<std::size_t>(k)] * U[ii][static_cast<std::size_t>(k)];
    }
    pa += Ia * c[ii];
    const auto p = static_cast<std::size_t>(j.parent);
    IA[p] += congruence(xup[ii], Ia);
    pA[p] += xup[ii].inverse_apply_force(pa);
  }

  std::vector<S> qdd(static_cast<std::size_t>(tree.nv()), S(0.0));
  const SpatialMotionVector<S> a0 = detail::gravity_acceleration(tree.gravity);
  for (std::size_t i = 0; i < n; ++i) {
    const Joint<S>& j = tree.joints[i];
    const int p = j.parent;
    const SpatialMotionVector<S> ap = xup[i].apply_motion(p >= 0 ? a[static_cast<std::size_t>(p)] : a0) + c[i];
    const int nv = sub[i].n;
    if (nv > 0) {
      std::array<S, 6> rhs{};
      for (int k = 0; k < nv; ++k)
        rhs[static_cast<std::size_t>(k)] = u[i][static_cast<std::size_t>(k)] - dot(U[i][static_cast<std::size_t>(k)], ap);
      auto Dc = D[i];
      detail::cholesky_solve(Dc, nv, rhs);
      for (int k = 0; k < nv; ++k) qdd[static_cast<std::size_t>(j.v_index + k)] = rhs[static_cast<std::size_t>(k)];
    }
    a[i] = ap + detail::subspace_times(sub[i], std::span<const S>(qdd), static_cast<std::size_t>(j.v_index));
  }
  return qdd;
}

template <class S>
std::vector<S> forward_dynamics_aba(const KinematicTree<S>& tree, const std::vector<S>& q, const std::vector<S>& qd,
                                    const std::vector<S>& tau) {
  return forward_dynamics_aba(tree, std::span<const S>(q), std::span<const S>(qd), std::span<const S>(tau));
}

namespace detail {

template <class S>
std::vector<S> rnea_impl(const KinematicTree<S>& tree, std::span<const S> q, std::span<const S> qd, std::span<const S> qdd,
                         const Vec3<S>& gravity, std::span<const SpatialForceVector<S>> f_ext) {
  const std::size_t n = tree.size();
  if (qd.size() != static_cast<std::size_t>(tree.nv()) || qdd.size() != static_cast<std::size_t>(tree.nv()))
    throw std::invalid_argument("qd/qdd have the wrong dimension");
  const auto xup = parent_transforms(tree, q);
  const auto fx = external_in_body(tree, q, f_ext);
  std::vector<MotionSubspace<S>> sub(n);
  std::vector<SpatialMotionVector<S>> v(n), a(n);
  std::vector<SpatialForceVector<S>> f(n);
  const SpatialMotionVector<S> a0 = gravity_acceleration(gravity);

  for (std::size_t i = 0; i < n; ++i) {
    const Joint<S>& j = tree.joints[i];
    sub[i] = motion_subspace(j);
    const auto vi = static_cast<std::size_t>(j.v_index);
    const auto vj = subspace_times(sub[i], qd, vi);
    const int p = j.parent;
    const auto up = static_cast<std::size_t>(p);
    v[i] = p >= 0 ? xup[i].apply_motion(v[up]) + vj : vj;
    a[i] = xup[i].apply_motion(p >= 0 ? a[up] : a0) + subspace_times(sub[i], qdd, vi) + cross_motion(v[i], vj);
    const SpatialInertia<S> I = tree.bodies[i].spatial_inertia();
    f[i] = inertia_apply(I, a[i]) + cross_force(v[i], inertia_apply(I, v[i]));
    if (!f_ext.empty()) f[i] -= fx[i];
  }

  std::vector<S> tau(static_cast<std::size_t>(tree.nv()), S(0.0));
  for (std::size_t ii = n; ii-- > 0;) {
    const Joint<S>& j = tree.joints[ii];
    for (int k = 0; k < sub[ii].n; ++k)
      tau[static_cast<std::size_t>(j.v_index + k)] = dot(f[ii], sub[ii].col[static_cast<std::size_t>(k)]);
    if (j.parent >= 0) f[static_cast<std::size_t>(j.parent)] += xup[ii].inverse_apply_force(f[ii]);
  }
  return tau;
}

}  // namespace detail

/// Inverse dynamics by recursive Newton-Euler: the generalized forces that
/// produce q'' from (q, q').
template <class S>
std::vector<S> inverse_dynamics_rnea(const KinematicTree<S>& tree, std::span<const S> q, std::span<const S> qd,
                                     std::span<const S> qdd, std::span<const SpatialForceVector<S>> f_ext = {}) {
  return detail::rnea_impl(tree, q, qd, qdd, tree.gravity, f_ext);
}

template <class S>
std::vector<S> inverse_dynamics_rnea(const KinematicTree<S>& tree, const std::vector<S>& q, const std::vector<S>& qd,
                                     const std::vector<S>& qdd) {
  return inverse_dynamics_rnea(tree, std::span<const S>(q), std::span<const S>(qd), std::span<const S>(qdd));
}

/// C(q, q'): Coriolis, centrifugal and gravity terms.
template <class S>
std::vector<S> bias_forces(const KinematicTree<S>& tree, std::span<const S> q, std::span<const S> qd) {
  const std::vector<S> zero(static_cast<std::size_t>(tree.nv()), S(0.0));
  return detail::rnea_impl(tree, q, qd, std::span<const S>(zero), tree.gravity, {});
}

template <class S>
std::vector<S> bias_forces(const KinematicTree<S>& tree, const std::vector<S>& q, const std::vector<S>& qd) {
  return bias_forces(tree, std::span<const S>(q), std::span<const S>(qd));
}

/// Joint-space inertia matrix H(q), row-major nv x nv, one RNEA per column.
template <class S>
std::vector<S> mass_matrix(const KinematicTree<S>& tree, std::span<const S> q) {
  const auto nv = static_cast<std::size_t>(tree.nv());
  const std::vector<S> zero(nv, S(0.0));
  const Vec3<S> no_gravity = Vec3<S>::zero();
  std::vector<S> H(nv * nv, S(0.0));
  std::vector<S> e(nv, S(0.0));
  for (std::size_t c = 0; c < nv; ++c) {
    e[c] = S(1.0);
    const auto col = detail::rnea_impl(tree, q, std::span<const S>(zero), std::span<const S>(e), no_gravity, {});
    for (std::size_t r = 0; r < nv; ++r) H[r * nv + c] = col[r];
    e[c] = S(0.0);
  }
  return H;
}

template <class S>
std::vector<S> mass_matrix(const KinematicTree<S>& tree, const std::vector<S>& q) {
  return mass_matrix(tree, std::span<const S>(q));
}

/// Semi-implicit Euler: velocities first, positions from the new velocities.
/// Floating-joint quaternions follow their body-frame angular velocity and are
/// renormalized with a guarded square root.
template <class S>
JointState<S> integrate_semi_implicit(const KinematicTree<S>& tree, const JointState<S>& state, std::span<const S> qdd,
                                      double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
  JointState<S> next = state;
  next.qdd.assign(qdd.begin(), qdd.end());
  for (const auto& j : tree.joints) {
    const auto qi = static_cast<std::size_t>(j.q_index);
    const auto vi = static_cast<std::size_t>(j.v_index);
    if (j.type == JointType::Fixed) continue;
    if (j.type != JointType::Floating) {
      next.qd[vi] = state.qd[vi] + dt * qdd[vi];
      next.q[qi] = state.q[qi] + dt * next.qd[vi];
      continue;
    }
    for (std::size_t k = 0; k < 6; ++k) next.qd[vi + k] = state.qd[vi + k] + dt * qdd[vi + k];
    const S& w = state.q[qi + 3];
    const S& x = state.q[qi + 4];
    const S& y = state.q[qi + 5];
    const S& z = state.q[qi + 6];
    const Mat3<S> R = quat_matrix(w, x, y, z);
    const Vec3<S> lin(next.qd[vi + 3], next.qd[vi + 4], next.qd[vi + 5]);
    const Vec3<S> dp = R * lin;
    for (int k = 0; k < 3; ++k) next.q[qi + static_cast<std::size_t>(k)] = state.q[qi + static_cast<std::size_t>(k)] + dt * dp[k];
    // q' = q + dt/2 * q (x) (0, omega)
    const S& ox = next.qd[vi];
    const S& oy = next.qd[vi + 1];
    const S& oz = next.qd[vi + 2];
    const double h = 0.5 * dt;
    S nw = w + h * (-x * ox - y * oy - z * oz);
    S nx = x + h * (w * ox + y * oz - z * oy);
    S ny = y + h * (w * oy + z * ox - x * oz);
    S nz = z + h * (w * oz + x * oy - y * ox);
    const S norm = ad::sqrt(nw * nw + nx * nx + ny * ny + nz * nz + S(1e-12));
    next.q[qi + 3] = nw / norm;
    next.q[qi + 4] = nx / norm;
    next.q[qi + 5] = ny / norm;
    next.q[qi + 6] = nz / norm;
  }
  return next;
}

template <class S>
JointState<S> integrate_semi_implicit(const KinematicTree<S>& tree, const JointState<S>& state, const std::vector<S>& qdd,
                                      double dt) {
  return integrate_semi_implicit(tree, state, std::span<const S>(qdd), dt);
}

/// One FD + INT step from `state` under generalized force `tau`.
template <class S>
JointState<S> step(const KinematicTree<S>& tree, const JointState<S>& state, std::span<const S> tau, double dt) {
  const auto qdd = forward_dynamics_aba(tree, std::span<const S>(state.q), std::span<const S>(state.qd), tau);
  JointState<S> next = integrate_semi_implicit(tree, state, std::span<const S>(qdd), dt);
  next.tau.assign(tau.begin(), tau.end());
  return next;
}

template <class S>
struct Trajectory {
  double dt = 0.05;
  std::vector<JointState<S>> states;
  /// World poses per state; empty when rollouts skip kinematics.
  std::vector<std::vector<Pose<S>>> poses;
};

struct RolloutOptions {
  double dt = 0.05;
  /// Apply the first force vector only, then zero forces.
  bool impulse_once = false;
  bool compute_poses = true;
};

/// H applications of FD -> INT (-> KIN). `tau_schedule` holds one force
/// vector per step, a single vector reused for every step, or nothing (zero).
/// State k stores the acceleration and force of the step that produced it.
template <class S>
Trajectory<S> rollout(const KinematicTree<S>& tree, const JointState<S>& initial,
                      const std::vector<std::vector<S>>& tau_schedule, int horizon, const RolloutOptions& opts = {}) {
  if (horizon < 0) throw std::invalid_argument("rollout horizon must be non-negative");
  const auto nv = static_cast<std::size_t>(tree.nv());
  if (initial.q.size() != static_cast<std::size_t>(tree.nq()) || initial.qd.size() != nv)
    throw std::invalid_argument("initial state has the wrong dimension");
  if (!tau_schedule.empty() && tau_schedule.size() != 1 && tau_schedule.size() < static_cast<std::size_t>(horizon))
    throw std::invalid_argument("force schedule shorter than the horizon");
  for (const auto& t : tau_schedule)
    if (t.size() != nv) throw std::invalid_argument("force vector has the wrong dimension");

  Trajectory<S> traj;
  traj.dt = opts.dt;
  traj.states.reserve(static_cast<std::size_t>(horizon) + 1);
  JointState<S> s0 = initial;
  s0.qdd.assign(nv, S(0.0));
  s0.tau.assign(nv, S(0.0));
  traj.states.push_back(s0);
  if (opts.compute_poses) traj.poses.push_back(forward_kinematics(tree, s0.q));

  const std::vector<S> zero(nv, S(0.0));
  for (int k = 0; k < horizon; ++k) {
    const std::vector<S>* tau = &zero;
    if (!tau_schedule.empty()) {
      if (opts.impulse_once)
        tau = k == 0 ? &tau_schedule.front() : &zero;
      else
        tau = tau_schedule.size() == 1 ? &tau_schedule.front() : &tau_schedule[static_cast<std::size_t>(k)];
    }
    traj.states.push_back(step(tree, traj.states.back(), std::span<const S>(*tau), opts.dt));
    if (opts.compute_poses) traj.poses.push_back(forward_kinematics(tree, traj.states.back().q));
  }
  return traj;
}

/// Kinetic energy 1/2 sum v_i . I_i v_i.
template <class S>
S kinetic_energy(const KinematicTree<S>& tree, std::span<const S> q, std::span<const S> qd) {
  const auto xup = parent_transforms(tree, q);
  std::vector<SpatialMotionVector<S>> v(tree.size());
  S e = S(0.0);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const Joint<S>& j = tree.joints[i];
    const auto vj = detail::subspace_times(motion_subspace(j), qd, static_cast<std::size_t>(j.v_index));
    v[i] = j.parent >= 0 ? xup[i].apply_motion(v[static_cast<std::size_t>(j.parent)]) + vj : vj;
    e += S(0.5) * dot(inertia_apply(tree.bodies[i].spatial_inertia(), v[i]), v[i]);
  }
  return e;
}

/// Gravitational potential energy -sum m_i g . c_i.
template <class S>
S potential_energy(const KinematicTree<S>& tree, std::span<const S> q) {
  const auto coms = com_positions(tree, q);
  S e = S(0.0);
  for (std::size_t i = 0; i < coms.size(); ++i) e -= tree.bodies[i].mass * dot(tree.gravity, coms[i]);
  return e;
}

template <class S>
S total_energy(const KinematicTree<S>& tree, const JointState<S>& s) {
  return kinetic_energy(tree, std::span<const S>(s.q), std::span<const S>(s.qd)) +
         potential_energy(tree, std::span<const S>(s.q));
}

/// Writes `t,q0..,qd0..,qdd0..,tau0..,body_<name>_{x,y,z}..` with full
/// precision. `extra` columns (name, per-row values) are appended when given.
inline void write_trajectory_csv(std::ostream& out, const KinematicTree<double>& tree, const Trajectory<double>& traj,
                                 const std::vector<std::pair<std::string, std::vector<double>>>& extra = {}) {
  const int nq = tree.nq();
  const int nv = tree.nv();
  out << "t";
  for (int i = 0; i < nq; ++i) out << ",q" << i;
  for (int i = 0; i < nv; ++i) out << ",qd" << i;
  for (int i = 0; i < nv; ++i) out << ",qdd" << i;
  for (int i = 0; i < nv; ++i) out << ",tau" << i;
  for (const auto& b : tree.bodies) out << ",body_" << b.name << "_x,body_" << b.name << "_y,body_" << b.name << "_z";
  for (const auto& [name, values] : extra) out << "," << name;
  out << "\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  auto field = [&](double v) {
    out << ',';
    num(v);
  };
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const JointState<double>& s = traj.states[k];
    num(static_cast<double>(k) * traj.dt);
    for (double v : s.q) field(v);
    for (double v : s.qd) field(v);
    for (double v : s.qdd) field(v);
    for (double v : s.tau) field(v);
    const auto poses = k < traj.poses.size() ? traj.poses[k] : forward_kinematics(tree, s.q);
    for (const auto& p : poses) {
      field(p.position.x);
      field(p.position.y);
      field(p.position.z);
    }
    for (const auto& col : extra) field(k < col.second.size() ? col.second[k] : 0.0);
    out << "\n";
  }
}

}  // namespace diffrbd
