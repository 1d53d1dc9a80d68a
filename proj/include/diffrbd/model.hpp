#pragma once

// Kinematic trees: bodies, the joints connecting them, and the bindings that
// expose selected scalar fields as a free parameter vector.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "spatial.hpp"

namespace diffrbd {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class JointType { Revolute, Prismatic, Fixed, Floating };

inline int position_dofs(JointType t) {
  switch (t) {
    case JointType::Revolute:
    case JointType::Prismatic:
      return 1;
    case JointType::Fixed:
      return 0;
    case JointType::Floating:
      return 7;
  }
  return 0;
}

inline int velocity_dofs(JointType t) { return t == JointType::Floating ? 6 : position_dofs(t); }

template <class S>
struct Joint {
  std::string name;
  JointType type = JointType::Revolute;
  int parent = -1;  ///< body index, -1 for the world
  Vec3<S> axis{S(0.0), S(0.0), S(1.0)};
  Vec3<S> origin_xyz = Vec3<S>::zero();
  Vec3<S> origin_rpy = Vec3<S>::zero();
  /// When set, origin_xyz is derived as parent length along the parent's length axis.
  bool origin_along_parent_length = false;

  // Derived by KinematicTree::refresh().
  SpatialTransform<S> origin;  ///< parent body frame -> joint frame at q = 0
  int q_index = 0;
  int v_index = 0;

  int nq() const { return position_dofs(type); }
  int nv() const { return velocity_dofs(type); }
};

template <class S>
struct Body {
  std::string name;
  S mass = S(1.0);
  Vec3<S> com = Vec3<S>::zero();
  Mat3<S> inertia = Mat3<S>::zero();  ///< about the com, body frame

  /// Optional rod length. A body with a length gets a thin-rod rotational
  /// inertia m L^2 / 12 about its com, perpendicular to `length_axis`.
  std::optional<S> length;
  Vec3<double> length_axis{0.0, 0.0, 1.0};
  /// When set, com = fraction * length * length_axis.
  std::optional<double> com_along_length;

  SpatialInertia<S> spatial_inertia() const {
    SpatialInertia<S> I;
    I.mass = mass;
    I.com = com;
    I.inertia_com = inertia;
    return I;
  }
};

/// How a free parameter maps onto the physical field it drives.
enum class ParameterRole {
  Linear,      ///< theta is the field value
  LogPositive  ///< field = exp(theta), keeps masses and lengths positive
};

struct ParameterBinding {
  enum class Target { BodyMass, BodyCom, BodyLength, BodyInertia, JointOriginXyz, JointOriginRpy };

  std::string path;
  ParameterRole role = ParameterRole::Linear;
  Target target = Target::BodyMass;
  int index = 0;      ///< body or joint index
  int component = 0;  ///< vector/matrix component where applicable
};

template <class S>
class KinematicTree {
 public:
  std::vector<Body<S>> bodies;
  /// joints[i] connects bodies[joints[i].parent] (or the world) to bodies[i].
  std::vector<Joint<S>> joints;
  Vec3<S> gravity{S(0.0), S(0.0), S(-9.81)};
  std::vector<ParameterBinding> bindings;
  /// Optimizer-space values last written by set_parameters; lets get_parameters
  /// return them bit-exactly while the bound fields still match.
  std::vector<double> parameter_cache;

  std::size_t size() const { return bodies.size(); }
  int nq() const { return nq_; }
  int nv() const { return nv_; }

  int parent(std::size_t i) const { return joints[i].parent; }

  int body_index(const std::string& name) const {
    for (std::size_t i = 0; i < bodies.size(); ++i)
      if (bodies[i].name == name) return static_cast<int>(i);
    return -1;
  }

  int joint_index(const std::string& name) const {
    for (std::size_t i = 0; i < joints.size(); ++i)
      if (joints[i].name == name) return static_cast<int>(i);
    return -1;
  }

  /// Recomputes coordinate offsets and every derived quantity (length-driven
  /// com, inertia and joint origins, origin transforms). Call after editing fields.
  void refresh() {
    if (joints.size() != bodies.size()) throw ModelError("every body needs exactly one parent joint");
    nq_ = 0;
    nv_ = 0;
    for (std::size_t i = 0; i < joints.size(); ++i) {
      Joint<S>& j = joints[i];
      if (j.parent >= static_cast<int>(i)) throw ModelError("bodies must be ordered parents-first");
      j.q_index = nq_;
      j.v_index = nv_;
      nq_ += j.nq();
      nv_ += j.nv();

      Body<S>& b = bodies[i];
      if (b.length) {
        const S L = *b.length;
        const Vec3<S> u(S(b.length_axis.x), S(b.length_axis.y), S(b.length_axis.z));
        if (b.com_along_length) b.com = (S(*b.com_along_length) * L) * u;
        const S k = b.mass * L * L / S(12.0);
        Mat3<S> uu;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) uu(r, c) = u[r] * u[c];
        b.inertia = k * (Mat3<S>::identity() - uu);
      }
      if (j.origin_along_parent_length) {
        if (j.parent < 0 || !bodies[static_cast<std::size_t>(j.parent)].length)
          throw ModelError("joint '" + j.name + "' takes its origin from a parent without a length");
        const Body<S>& p = bodies[static_cast<std::size_t>(j.parent)];
        const Vec3<S> u(S(p.length_axis.x), S(p.length_axis.y), S(p.length_axis.z));
        j.origin_xyz = *p.length * u;
      }
      j.origin = SpatialTransform<S>::from_pose(rpy_matrix(j.origin_rpy), j.origin_xyz);
    }
  }

 private:
  int nq_ = 0;
  int nv_ = 0;
};

namespace detail {

template <class Tree>
auto& binding_field(Tree& tree, const ParameterBinding& b) {
  using T = ParameterBinding::Target;
  const auto i = static_cast<std::size_t>(b.index);
  switch (b.target) {
    case T::BodyMass:
      return tree.bodies[i].mass;
    case T::BodyCom:
      return tree.bodies[i].com[b.component];
    case T::BodyLength:
      return *tree.bodies[i].length;
    case T::BodyInertia:
      return tree.bodies[i].inertia.m[static_cast<std::size_t>(b.component)];
    case T::JointOriginXyz:
      return tree.joints[i].origin_xyz[b.component];
    case T::JointOriginRpy:
      return tree.joints[i].origin_rpy[b.component];
  }
  throw ModelError("unknown binding target");
}

/// Mirror element of a symmetric inertia entry, or -1 on the diagonal.
inline int inertia_mirror(int component) {
  const int r = component / 3;
  const int c = component % 3;
  return r == c ? -1 : 3 * c + r;
}

template <class S>
void assign_binding(KinematicTree<S>& tree, const ParameterBinding& b, const S& theta) {
  const S value = b.role == ParameterRole::LogPositive ? ad::exp(theta) : theta;
  binding_field(tree, b) = value;
  if (b.target == ParameterBinding::Target::BodyInertia) {
    const int mirror = inertia_mirror(b.component);
    if (mirror >= 0) tree.bodies[static_cast<std::size_t>(b.index)].inertia.m[static_cast<std::size_t>(mirror)] = value;
  }
}

}  // namespace detail

/// Converts a double tree into another scalar type; every field becomes a constant.
template <class T>
KinematicTree<T> cast_tree(const KinematicTree<double>& src) {
  auto v3 = [](const Vec3<double>& v) { return Vec3<T>(T(v.x), T(v.y), T(v.z)); };
  KinematicTree<T> out;
  out.gravity = v3(src.gravity);
  out.bindings = src.bindings;
  out.parameter_cache = src.parameter_cache;
  out.bodies.reserve(src.bodies.size());
  for (const auto& b : src.bodies) {
    Body<T> nb;
    nb.name = b.name;
    nb.mass = T(b.mass);
    nb.com = v3(b.com);
    for (std::size_t k = 0; k < 9; ++k) nb.inertia.m[k] = T(b.inertia.m[k]);
    if (b.length) nb.length = T(*b.length);
    nb.length_axis = b.length_axis;
    nb.com_along_length = b.com_along_length;
    out.bodies.push_back(std::move(nb));
  }
  out.joints.reserve(src.joints.size());
  for (const auto& j : src.joints) {
    Joint<T> nj;
    nj.name = j.name;
    nj.type = j.type;
    nj.parent = j.parent;
    nj.axis = v3(j.axis);
    nj.origin_xyz = v3(j.origin_xyz);
    nj.origin_rpy = v3(j.origin_rpy);
    nj.origin_along_parent_length = j.origin_along_parent_length;
    out.joints.push_back(std::move(nj));
  }
  out.refresh();
  return out;
}

/// Number of free parameters.
template <class S>
std::size_t parameter_count(const KinematicTree<S>& tree) {
  return tree.bindings.size();
}

/// Current free parameters in optimizer space (log for masses and lengths).
inline std::vector<double> get_parameters(const KinematicTree<double>& tree) {
  std::vector<double> theta;
  theta.reserve(tree.bindings.size());
  const bool cached = tree.parameter_cache.size() == tree.bindings.size();
  for (std::size_t k = 0; k < tree.bindings.size(); ++k) {
    const ParameterBinding& b = tree.bindings[k];
    const double v = detail::binding_field(tree, b);
    const bool log_space = b.role == ParameterRole::LogPositive;
    if (cached) {
      const double c = tree.parameter_cache[k];
      if ((log_space ? std::exp(c) : c) == v) {
        theta.push_back(c);
        continue;
      }
    }
    theta.push_back(log_space ? std::log(v) : v);
  }
  return theta;
}

/// Writes `theta` (optimizer space) into the bound fields and refreshes the
/// derived quantities. Topology is never touched.
template <class S>
void set_parameters(KinematicTree<S>& tree, std::span<const S> theta) {
  if (theta.size() != tree.bindings.size())
    throw std::invalid_argument("set_parameters: expected " + std::to_string(tree.bindings.size()) +
                                " parameters, got " + std::to_string(theta.size()));
  for (std::size_t k = 0; k < theta.size(); ++k) detail::assign_binding(tree, tree.bindings[k], theta[k]);
  if constexpr (std::is_same_v<S, double>) tree.parameter_cache.assign(theta.begin(), theta.end());
  tree.refresh();
}

inline void set_parameters(KinematicTree<double>& tree, const std::vector<double>& theta) {
  set_parameters<double>(tree, std::span<const double>(theta));
}

/// A copy of `base` in scalar type S with the free parameters replaced by `theta`.
template <class S>
KinematicTree<S> with_parameters(const KinematicTree<double>& base, std::span<const S> theta) {
  KinematicTree<S> tree = cast_tree<S>(base);
  set_parameters(tree, theta);
  return tree;
}

/// Builds a binding from a document path such as "bodies/pole/mass" or
/// "joints/hinge/origin/xyz/0".
inline ParameterBinding parse_binding(const KinematicTree<double>& tree, const std::string& path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = path.find('/', start);
    parts.push_back(path.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  auto component = [&](const std::string& s, int limit) {
    std::size_t used = 0;
    int c = -1;
    try {
      c = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || c < 0 || c >= limit) throw ModelError("bad component index in parameter path '" + path + "'");
    return c;
  };
  using T = ParameterBinding::Target;
  ParameterBinding b;
  b.path = path;
  if (parts.size() >= 3 && parts[0] == "bodies") {
    b.index = tree.body_index(parts[1]);
    if (b.index < 0) throw ModelError("parameter path '" + path + "' names an unknown body");
    const Body<double>& body = tree.bodies[static_cast<std::size_t>(b.index)];
    if (parts[2] == "mass" && parts.size() == 3) {
      b.target = T::BodyMass;
      b.role = ParameterRole::LogPositive;
      return b;
    }
    if (parts[2] == "length" && parts.size() == 3) {
      if (!body.length) throw ModelError("parameter path '" + path + "' binds a body without a length");
      b.target = T::BodyLength;
      b.role = ParameterRole::LogPositive;
      return b;
    }
    if (parts[2] == "com" && parts.size() == 4) {
      if (body.com_along_length) throw ModelError("parameter path '" + path + "' binds a length-derived com");
      b.target = T::BodyCom;
      b.component = component(parts[3], 3);
      return b;
    }
    if (parts[2] == "inertia" && parts.size() == 4) {
      if (body.length) throw ModelError("parameter path '" + path + "' binds a length-derived inertia");
      // Document order Ixx, Iyy, Izz, Ixy, Ixz, Iyz.
      static constexpr int map[6] = {0, 4, 8, 1, 2, 5};
      b.target = T::BodyInertia;
      b.component = map[component(parts[3], 6)];
      return b;
    }
  } else if (parts.size() == 5 && parts[0] == "joints" && parts[2] == "origin") {
    b.index = tree.joint_index(parts[1]);
    if (b.index < 0) throw ModelError("parameter path '" + path + "' names an unknown joint");
    if (parts[3] == "xyz") {
      if (tree.joints[static_cast<std::size_t>(b.index)].origin_along_parent_length)
        throw ModelError("parameter path '" + path + "' binds a length-derived origin");
      b.target = T::JointOriginXyz;
    } else if (parts[3] == "rpy") {
      b.target = T::JointOriginRpy;
    } else {
      throw ModelError("unsupported parameter path '" + path + "'");
    }
    b.component = component(parts[4], 3);
    return b;
  }
  throw ModelError("unsupported parameter path '" + path + "'");
}

/// Standard Denavit-Hartenberg parameters of one revolute joint; theta is the
/// joint coordinate.
template <class S>
struct DHJoint {
  S d{};
  S a{};
  S alpha{};
};

template <class S>
using DHParams = std::vector<DHJoint<S>>;

/// Serial chain of revolute joints realizing T_i = Rz(q_i) Tz(d_i) Tx(a_i) Rx(alpha_i),
/// ending in a fixed "end_effector" body at the last DH frame. Link bodies are
/// unit point masses at the link ends.
template <class S>
KinematicTree<S> from_dh(const DHParams<S>& dh) {
  if (dh.empty()) throw ModelError("from_dh: need at least one joint");
  KinematicTree<S> tree;
  const std::size_t n = dh.size();
  for (std::size_t i = 0; i <= n; ++i) {
    const bool ee = i == n;
    Body<S> b;
    b.name = ee ? std::string("end_effector") : "link" + std::to_string(i);
    b.mass = S(1.0);
    if (!ee) b.com = Vec3<S>(dh[i].a, S(0.0), dh[i].d);
    Joint<S> j;
    j.name = ee ? std::string("tool") : "joint" + std::to_string(i);
    j.type = ee ? JointType::Fixed : JointType::Revolute;
    j.parent = static_cast<int>(i) - 1;
    j.axis = Vec3<S>(S(0.0), S(0.0), S(1.0));
    if (i > 0) {
      const DHJoint<S>& prev = dh[i - 1];
      j.origin_xyz = Vec3<S>(prev.a, S(0.0), prev.d);
      j.origin_rpy = Vec3<S>(prev.alpha, S(0.0), S(0.0));
    }
    tree.bodies.push_back(std::move(b));
    tree.joints.push_back(std::move(j));
  }
  tree.refresh();
  return tree;
}

/// Unpacks a flat (d, a, alpha) per joint vector.
template <class S>
DHParams<S> dh_from_vector(std::span<const S> flat) {
  if (flat.size() % 3 != 0 || flat.empty()) throw std::invalid_argument("DH vector length must be a positive multiple of 3");
  DHParams<S> dh(flat.size() / 3);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
  return dh;
}

}  // namespace diffrbd
