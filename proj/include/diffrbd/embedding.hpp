#pragma once

// Embedded state vectors for control and identification, and the one-step
// transition x' = f(x, u) they induce.
//
// Layout: every prismatic coordinate contributes (p, p'), then every revolute
// coordinate contributes (sin q, cos q), then the revolute velocities, then
// (optionally) the revolute accelerations. For a double cartpole this is
// (p, p', sin q0, cos q0, sin q1, cos q1, q0', q1', q0'', q1'').

#include <span>
#include <string>
#include <stdexcept>
#include <vector>

#include "autodiff.hpp"
#include "dynamics.hpp"
#include "model.hpp"

namespace diffrbd {

struct StateEmbedding {
  struct Dof {
    int q_index = 0;
    int v_index = 0;
  };
  std::vector<Dof> linear;
  std::vector<Dof> angular;
  bool include_accelerations = true;
  int nq = 0;
  int nv = 0;

  template <class S>
  static StateEmbedding for_tree(const KinematicTree<S>& tree, bool include_accelerations = true) {
    StateEmbedding e;
    e.include_accelerations = include_accelerations;
    e.nq = tree.nq();
    e.nv = tree.nv();
    for (const auto& j : tree.joints) {
      switch (j.type) {
        case JointType::Prismatic:
          e.linear.push_back({j.q_index, j.v_index});
          break;
        case JointType::Revolute:
          e.angular.push_back({j.q_index, j.v_index});
          break;
        case JointType::Fixed:
          break;
        case JointType::Floating:
          throw std::invalid_argument("state embedding does not support floating joints");
      }
    }
    return e;
  }

  std::size_t dim() const {
    return 2 * linear.size() + (include_accelerations ? 4 : 3) * angular.size();
  }

  /// Offset of the (sin, cos) pair of the k-th revolute coordinate.
  std::size_t angle_offset(std::size_t k) const { return 2 * linear.size() + 2 * k; }

  template <class S>
  std::vector<S> embed(std::span<const S> q, std::span<const S> qd, std::span<const S> qdd) const {
    std::vector<S> x;
    x.reserve(dim());
    for (const auto& d : linear) {
      x.push_back(q[static_cast<std::size_t>(d.q_index)]);
      x.push_back(qd[static_cast<std::size_t>(d.v_index)]);
    }
    for (const auto& d : angular) {
      x.push_back(ad::sin(q[static_cast<std::size_t>(d.q_index)]));
      x.push_back(ad::cos(q[static_cast<std::size_t>(d.q_index)]));
    }
    for (const auto& d : angular) x.push_back(qd[static_cast<std::size_t>(d.v_index)]);
    if (include_accelerations)
      for (const auto& d : angular) x.push_back(qdd[static_cast<std::size_t>(d.v_index)]);
    return x;
  }

  template <class S>
  std::vector<S> embed(const JointState<S>& s) const {
    return embed(std::span<const S>(s.q), std::span<const S>(s.qd), std::span<const S>(s.qdd));
  }

  /// Recovers (q, q') from an embedded state; angles via atan2(sin, cos).
  template <class S>
  JointState<S> decode(std::span<const S> x) const {
    if (x.size() != dim()) throw std::invalid_argument("embedded state has the wrong dimension");
    JointState<S> s = JointState<S>::zero(nq, nv);
    std::size_t k = 0;
    for (const auto& d : linear) {
      s.q[static_cast<std::size_t>(d.q_index)] = x[k++];
      s.qd[static_cast<std::size_t>(d.v_index)] = x[k++];
    }
    for (const auto& d : angular) {
      s.q[static_cast<std::size_t>(d.q_index)] = ad::atan2(x[k], x[k + 1]);
      k += 2;
    }
    for (const auto& d : angular) s.qd[static_cast<std::size_t>(d.v_index)] = x[k++];
    if (include_accelerations)
      for (const auto& d : angular) s.qdd[static_cast<std::size_t>(d.v_index)] = x[k++];
    return s;
  }
};

/// Which generalized coordinates the control vector drives.
struct Actuation {
  std::vector<int> v_indices;

  std::size_t size() const { return v_indices.size(); }

  template <class S>
  std::vector<S> to_tau(std::span<const S> u, int nv) const {
    if (u.size() != v_indices.size()) throw std::invalid_argument("control has the wrong dimension");
    std::vector<S> tau(static_cast<std::size_t>(nv), S(0.0));
    for (std::size_t k = 0; k < u.size(); ++k) tau[static_cast<std::size_t>(v_indices[k])] = u[k];
    return tau;
  }
};

/// Embedded one-step transition: decode, then `substeps` rounds of FD and INT
/// at dt / substeps with u held, then embed.
template <class S>
std::vector<S> embedded_transition(const KinematicTree<S>& tree, const StateEmbedding& emb, const Actuation& act,
                                   std::span<const S> x, std::span<const S> u, double dt, int substeps = 1) {
  if (substeps < 1) throw std::invalid_argument("substeps must be at least 1");
  JointState<S> s = emb.decode(x);
  const std::vector<S> tau = act.to_tau(u, tree.nv());
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) s = step(tree, s, std::span<const S>(tau), h);
  return emb.embed(s);
}

/// Everything needed to turn a tree into a controlled discrete-time system.
struct SystemSpec {
  StateEmbedding embedding;
  Actuation actuation;
  double dt = 0.05;
  /// Integrator steps per control interval.
  int substeps = 1;

  /// Actuates the named joints (1-dof joints only), in the given order.
  template <class S>
  static SystemSpec for_tree(const KinematicTree<S>& tree, const std::vector<std::string>& actuated_joints, double dt,
                             bool include_accelerations = true, int substeps = 1) {
    SystemSpec spec;
    spec.embedding = StateEmbedding::for_tree(tree, include_accelerations);
    spec.dt = dt;
    spec.substeps = substeps;
    for (const auto& name : actuated_joints) {
      const int j = tree.joint_index(name);
      if (j < 0) throw std::invalid_argument("unknown actuated joint '" + name + "'");
      const auto& joint = tree.joints[static_cast<std::size_t>(j)];
      if (joint.nv() != 1) throw std::invalid_argument("actuated joint '" + name + "' must have one degree of freedom");
      spec.actuation.v_indices.push_back(joint.v_index);
    }
    return spec;
  }

  std::size_t state_dim() const { return embedding.dim(); }
  std::size_t control_dim() const { return actuation.size(); }

  template <class S>
  std::vector<S> transition(const KinematicTree<S>& tree, std::span<const S> x, std::span<const S> u) const {
    return embedded_transition(tree, embedding, actuation, x, u, dt, substeps);
  }
};

}  // namespace diffrbd
