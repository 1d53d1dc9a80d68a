#pragma once

// Spatial (6-D) vector algebra in Plucker coordinates, angular block first.
//
// A SpatialTransform X from frame A to frame B is stored as (E, r): E rotates
// A-coordinates into B-coordinates and r is the origin of B expressed in A.
// Motion vectors transform as X m = [E w ; E (v - r x w)], force vectors as
// X* f = [E (n - r x f) ; E f].

#include <array>
#include <cmath>

#include "autodiff.hpp"

namespace diffrbd {

template <class S>
struct Vec3 {
  S x{}, y{}, z{};

  Vec3() = default;
  Vec3(S x_, S y_, S z_) : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}

  static Vec3 zero() { return Vec3(S(0.0), S(0.0), S(0.0)); }

  S& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const S& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend Vec3 operator*(const S& s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend Vec3 operator*(const Vec3& a, const S& s) { return {a.x * s, a.y * s, a.z * s}; }
};

template <class S>
S dot(const Vec3<S>& a, const Vec3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class S>
Vec3<S> cross(const Vec3<S>& a, const Vec3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class S>
S squared_norm(const Vec3<S>& a) {
  return dot(a, a);
}

/// Row-major 3x3 matrix.
template <class S>
struct Mat3 {
  std::array<S, 9> m{};

  static Mat3 zero() {
    Mat3 r;
    r.m.fill(S(0.0));
    return r;
  }
  static Mat3 identity() {
    Mat3 r = zero();
    r(0, 0) = S(1.0);
    r(1, 1) = S(1.0);
    r(2, 2) = S(1.0);
    return r;
  }
  static Mat3 diagonal(const S& a, const S& b, const S& c) {
    Mat3 r = zero();
    r(0, 0) = a;
    r(1, 1) = b;
    r(2, 2) = c;
    return r;
  }
  /// Matrix of the cross product: skew(v) * w == cross(v, w).
  static Mat3 skew(const Vec3<S>& v) {
    Mat3 r = zero();
    r(0, 1) = -v.z;
    r(0, 2) = v.y;
    r(1, 0) = v.z;
    r(1, 2) = -v.x;
    r(2, 0) = -v.y;
    r(2, 1) = v.x;
    return r;
  }

  S& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }
  const S& operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }

  Mat3 transpose() const {
    Mat3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t(i, j) = (*this)(j, i);
    return t;
  }

  Vec3<S> row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }
  Vec3<S> col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }

  friend Vec3<S> operator*(const Mat3& a, const Vec3<S>& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z, a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
    return r;
  }
  friend Mat3 operator+(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.m[i] = a.m[i] + b.m[i];
    return r;
  }
  friend Mat3 operator-(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.m[i] = a.m[i] - b.m[i];
    return r;
  }
  friend Mat3 operator*(const S& s, const Mat3& a) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.m[i] = s * a.m[i];
    return r;
  }
};

/// Rotation matrix for a right-handed rotation by `angle` about unit `axis`.
template <class S>
Mat3<S> axis_angle(const Vec3<S>& axis, const S& angle) {
  const S c = ad::cos(angle);
  const S s = ad::sin(angle);
  const S t = S(1.0) - c;
  const S& x = axis.x;
  const S& y = axis.y;
  const S& z = axis.z;
  Mat3<S> r;
  r(0, 0) = t * x * x + c;
  r(0, 1) = t * x * y - s * z;
  r(0, 2) = t * x * z + s * y;
  r(1, 0) = t * x * y + s * z;
  r(1, 1) = t * y * y + c;
  r(1, 2) = t * y * z - s * x;
  r(2, 0) = t * x * z - s * y;
  r(2, 1) = t * y * z + s * x;
  r(2, 2) = t * z * z + c;
  return r;
}

template <class S>
Mat3<S> rot_x(const S& a) {
  return axis_angle(Vec3<S>(S(1.0), S(0.0), S(0.0)), a);
}
template <class S>
Mat3<S> rot_y(const S& a) {
  return axis_angle(Vec3<S>(S(0.0), S(1.0), S(0.0)), a);
}
template <class S>
Mat3<S> rot_z(const S& a) {
  return axis_angle(Vec3<S>(S(0.0), S(0.0), S(1.0)), a);
}

/// URDF-style fixed-axis roll/pitch/yaw: R = Rz(yaw) Ry(pitch) Rx(roll).
template <class S>
Mat3<S> rpy_matrix(const Vec3<S>& rpy) {
  return rot_z(rpy.z) * rot_y(rpy.y) * rot_x(rpy.x);
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
template <class S>
Mat3<S> quat_matrix(const S& w, const S& x, const S& y, const S& z) {
  Mat3<S> r;
  r(0, 0) = S(1.0) - S(2.0) * (y * y + z * z);
  r(0, 1) = S(2.0) * (x * y - w * z);
  r(0, 2) = S(2.0) * (x * z + w * y);
  r(1, 0) = S(2.0) * (x * y + w * z);
  r(1, 1) = S(1.0) - S(2.0) * (x * x + z * z);
  r(1, 2) = S(2.0) * (y * z - w * x);
  r(2, 0) = S(2.0) * (x * z - w * y);
  r(2, 1) = S(2.0) * (y * z + w * x);
  r(2, 2) = S(1.0) - S(2.0) * (x * x + y * y);
  return r;
}

template <class S>
struct SpatialMotionVector {
  Vec3<S> angular = Vec3<S>::zero();
  Vec3<S> linear = Vec3<S>::zero();

  S& operator[](int i) { return i < 3 ? angular[i] : linear[i - 3]; }
  const S& operator[](int i) const { return i < 3 ? angular[i] : linear[i - 3]; }

  friend SpatialMotionVector operator+(const SpatialMotionVector& a, const SpatialMotionVector& b) {
    return {a.angular + b.angular, a.linear + b.linear};
  }
  friend SpatialMotionVector operator-(const SpatialMotionVector& a, const SpatialMotionVector& b) {
    return {a.angular - b.angular, a.linear - b.linear};
  }
  friend SpatialMotionVector operator*(const S& s, const SpatialMotionVector& a) {
    return {s * a.angular, s * a.linear};
  }
  SpatialMotionVector& operator+=(const SpatialMotionVector& o) {
    angular += o.angular;
    linear += o.linear;
    return *this;
  }
};

template <class S>
struct SpatialForceVector {
  Vec3<S> torque = Vec3<S>::zero();
  Vec3<S> force = Vec3<S>::zero();

  S& operator[](int i) { return i < 3 ? torque[i] : force[i - 3]; }
  const S& operator[](int i) const { return i < 3 ? torque[i] : force[i - 3]; }

  friend SpatialForceVector operator+(const SpatialForceVector& a, const SpatialForceVector& b) {
    return {a.torque + b.torque, a.force + b.force};
  }
  friend SpatialForceVector operator-(const SpatialForceVector& a, const SpatialForceVector& b) {
    return {a.torque - b.torque, a.force - b.force};
  }
  friend SpatialForceVector operator*(const S& s, const SpatialForceVector& a) {
    return {s * a.torque, s * a.force};
  }
  SpatialForceVector& operator+=(const SpatialForceVector& o) {
    torque += o.torque;
    force += o.force;
    return *this;
  }
  SpatialForceVector& operator-=(const SpatialForceVector& o) {
    torque -= o.torque;
    force -= o.force;
    return *this;
  }
};

/// Duality pairing <f, m> (power).
template <class S>
S dot(const SpatialForceVector<S>& f, const SpatialMotionVector<S>& m) {
  return dot(f.torque, m.angular) + dot(f.force, m.linear);
}

/// v x m for motion vectors.
template <class S>
SpatialMotionVector<S> cross_motion(const SpatialMotionVector<S>& v, const SpatialMotionVector<S>& m) {
  return {cross(v.angular, m.angular), cross(v.angular, m.linear) + cross(v.linear, m.angular)};
}

/// v x* f for force vectors.
template <class S>
SpatialForceVector<S> cross_force(const SpatialMotionVector<S>& v, const SpatialForceVector<S>& f) {
  return {cross(v.angular, f.torque) + cross(v.linear, f.force), cross(v.angular, f.force)};
}

template <class S>
struct SpatialTransform {
  Mat3<S> rotation = Mat3<S>::identity();
  Vec3<S> translation = Vec3<S>::zero();

  static SpatialTransform identity() { return {}; }

  /// Transform into a frame displaced by `r` (expressed in the current frame).
  static SpatialTransform translate(const Vec3<S>& r) { return {Mat3<S>::identity(), r}; }

  /// Transform into a frame whose orientation relative to the current one is `R`.
  static SpatialTransform rotate(const Mat3<S>& R) { return {R.transpose(), Vec3<S>::zero()}; }

  /// Transform into a frame with pose (R, p) relative to the current one.
  static SpatialTransform from_pose(const Mat3<S>& R, const Vec3<S>& p) { return {R.transpose(), p}; }

  SpatialMotionVector<S> apply_motion(const SpatialMotionVector<S>& m) const {
    return {rotation * m.angular, rotation * (m.linear - cross(translation, m.angular))};
  }

  SpatialForceVector<S> apply_force(const SpatialForceVector<S>& f) const {
    return {rotation * (f.torque - cross(translation, f.force)), rotation * f.force};
  }

  /// X^{-1} m: back from the target frame to the source frame.
  SpatialMotionVector<S> inverse_apply_motion(const SpatialMotionVector<S>& m) const {
    const Mat3<S> Et = rotation.transpose();
    const Vec3<S> w = Et * m.angular;
    return {w, Et * m.linear + cross(translation, w)};
  }

  /// X^T f: a force in the target frame expressed back in the source frame.
  SpatialForceVector<S> inverse_apply_force(const SpatialForceVector<S>& f) const {
    const Mat3<S> Et = rotation.transpose();
    const Vec3<S> fo = Et * f.force;
    return {Et * f.torque + cross(translation, fo), fo};
  }

  SpatialTransform inverse() const {
    const Mat3<S> Et = rotation.transpose();
    return {Et, -(rotation * translation)};
  }

  /// Orientation of the target frame expressed in the source frame.
  Mat3<S> pose_rotation() const { return rotation.transpose(); }
};

/// compose(A, B) applies B first, then A.
template <class S>
SpatialTransform<S> compose(const SpatialTransform<S>& a, const SpatialTransform<S>& b) {
  return {a.rotation * b.rotation, b.translation + b.rotation.transpose() * a.translation};
}

template <class S>
SpatialTransform<S> invert(const SpatialTransform<S>& x) {
  return x.inverse();
}

template <class S>
SpatialMotionVector<S> transform_motion(const SpatialTransform<S>& x, const SpatialMotionVector<S>& m) {
  return x.apply_motion(m);
}

template <class S>
SpatialForceVector<S> transform_force(const SpatialTransform<S>& x, const SpatialForceVector<S>& f) {
  return x.apply_force(f);
}

/// Rigid-body inertia: mass, centre of mass, and rotational inertia about the com.
template <class S>
struct SpatialInertia {
  S mass{};
  Vec3<S> com = Vec3<S>::zero();
  Mat3<S> inertia_com = Mat3<S>::zero();

  /// Rotational inertia about the frame origin (parallel axis theorem).
  Mat3<S> inertia_origin() const {
    const Mat3<S> cx = Mat3<S>::skew(com);
    return inertia_com - mass * (cx * cx);
  }
};

template <class S>
SpatialForceVector<S> inertia_apply(const SpatialInertia<S>& I, const SpatialMotionVector<S>& v) {
  const Vec3<S> lin = v.linear - cross(I.com, v.angular);
  return {I.inertia_com * v.angular + I.mass * cross(I.com, lin), I.mass * lin};
}

/// Dense 6x6 matrix, used for articulated-body inertias.
template <class S>
struct Mat6 {
  std::array<S, 36> m{};

  static Mat6 zero() {
    Mat6 r;
    r.m.fill(S(0.0));
    return r;
  }

  S& operator()(int r, int c) { return m[static_cast<std::size_t>(6 * r + c)]; }
  const S& operator()(int r, int c) const { return m[static_cast<std::size_t>(6 * r + c)]; }

  friend Mat6 operator+(const Mat6& a, const Mat6& b) {
    Mat6 r;
    for (std::size_t i = 0; i < 36; ++i) r.m[i] = a.m[i] + b.m[i];
    return r;
  }
  Mat6& operator+=(const Mat6& o) {
    for (std::size_t i = 0; i < 36; ++i) m[i] += o.m[i];
    return *this;
  }

  SpatialForceVector<S> operator*(const SpatialMotionVector<S>& v) const {
    SpatialForceVector<S> f;
    for (int i = 0; i < 6; ++i) {
      S acc = (*this)(i, 0) * v[0];
      for (int j = 1; j < 6; ++j) acc += (*this)(i, j) * v[j];
      f[i] = acc;
    }
    return f;
  }
};

template <class S>
Mat6<S> to_matrix(const SpatialInertia<S>& I) {
  Mat6<S> r = Mat6<S>::zero();
  const Mat3<S> io = I.inertia_origin();
  const Mat3<S> mcx = I.mass * Mat3<S>::skew(I.com);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r(i, j) = io(i, j);
      r(i, 3 + j) = mcx(i, j);
      r(3 + i, j) = -mcx(i, j);
    }
    r(3 + i, 3 + i) = I.mass;
  }
  return r;
}

/// Dense 6x6 motion-transform matrix of X.
template <class S>
Mat6<S> to_matrix(const SpatialTransform<S>& X) {
  Mat6<S> r = Mat6<S>::zero();
  const Mat3<S> erx = X.rotation * Mat3<S>::skew(X.translation);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r(i, j) = X.rotation(i, j);
      r(3 + i, 3 + j) = X.rotation(i, j);
      r(3 + i, j) = -erx(i, j);
    }
  }
  return r;
}

/// X^T A X for a symmetric force-from-motion operator A in the target frame:
/// the same operator expressed in the source frame.
template <class S>
Mat6<S> congruence(const SpatialTransform<S>& X, const Mat6<S>& A) {
  const Mat6<S> xm = to_matrix(X);
  Mat6<S> ax = Mat6<S>::zero();
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      S acc = A(i, 0) * xm(0, j);
      for (int k = 1; k < 6; ++k) acc += A(i, k) * xm(k, j);
      ax(i, j) = acc;
    }
  Mat6<S> r = Mat6<S>::zero();
  for (int i = 0; i < 6; ++i)
    for (int j = i; j < 6; ++j) {
      S acc = xm(0, i) * ax(0, j);
      for (int k = 1; k < 6; ++k) acc += xm(k, i) * ax(k, j);
      r(i, j) = acc;
      if (i != j) r(j, i) = acc;
    }
  return r;
}

}  // namespace diffrbd
