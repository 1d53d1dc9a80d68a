#pragma once

// Reverse-mode automatic differentiation over an explicit recording tape.
//
// Every algorithm in the library is a template over its scalar type and is
// instantiated either with `double` or with `ad::Var`. A `Var` remembers the
// tape it was recorded on; arithmetic between two constants never touches a
// tape, so casting a double model into `Var` costs nothing until a tracked
// value flows through it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <type_traits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace diffrbd::ad {

/// Thrown for operations whose value or derivative is undefined at the input.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Append-only record of elementary operations. Each node has at most two
/// operands, both with a strictly smaller index.
class Tape {
 public:
  struct Node {
    std::int32_t lhs;
    std::int32_t rhs;
    double dlhs;
    double drhs;
  };

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::int32_t push_leaf() { return push(-1, 0.0, -1, 0.0); }

  std::int32_t push(std::int32_t lhs, double dlhs, std::int32_t rhs = -1, double drhs = 0.0) {
    nodes_.push_back(Node{lhs, rhs, dlhs, drhs});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  void clear() noexcept { nodes_.clear(); }
  /// Drops every node recorded after the first `n`; values referring to them become invalid.
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }

  /// Adjoints of every node with respect to `output`, in one backward sweep.
  std::vector<double> adjoints(std::int32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (std::int32_t i = output; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += n.dlhs * a;
      if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += n.drhs * a;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
};

/// A real value optionally tracked on a tape. Untracked values are constants.
class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT(google-explicit-constructor)

  static Var leaf(Tape& tape, double v) { return Var(v, tape.push_leaf(), &tape); }

  double value() const noexcept { return value_; }
  std::int32_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }
  bool tracked() const noexcept { return tape_ != nullptr; }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& a) { return a; }
  friend Var operator-(const Var& a) { return unary(a, -a.value_, -1.0); }

  friend Var operator+(const Var& a, const Var& b) { return binary(a, b, a.value_ + b.value_, 1.0, 1.0); }
  friend Var operator-(const Var& a, const Var& b) { return binary(a, b, a.value_ - b.value_, 1.0, -1.0); }
  friend Var operator*(const Var& a, const Var& b) {
    return binary(a, b, a.value_ * b.value_, b.value_, a.value_);
  }
  friend Var operator/(const Var& a, const Var& b) {
    if (b.value_ == 0.0) throw DomainError("division by zero");
    const double inv = 1.0 / b.value_;
    const double r = a.value_ * inv;
    return binary(a, b, r, inv, -r * inv);
  }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Var& a, const Var& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Var& a, const Var& b) { return a.value_ >= b.value_; }
  friend bool operator==(const Var& a, const Var& b) { return a.value_ == b.value_; }
  friend bool operator!=(const Var& a, const Var& b) { return a.value_ != b.value_; }

  // Local partials are supplied by the caller; used by the elementary functions below.
  static Var unary(const Var& a, double value, double da) {
    if (!a.tape_) return Var(value);
    return Var(value, a.tape_->push(a.index_, da), a.tape_);
  }

  static Var binary(const Var& a, const Var& b, double value, double da, double db) {
    if (!a.tape_ && !b.tape_) return Var(value);
    if (!b.tape_) return Var(value, a.tape_->push(a.index_, da), a.tape_);
    if (!a.tape_) return Var(value, b.tape_->push(b.index_, db), b.tape_);
    if (a.tape_ != b.tape_) throw std::logic_error("operands recorded on different tapes");
    return Var(value, a.tape_->push(a.index_, da, b.index_, db), a.tape_);
  }

 private:
  Var(double v, std::int32_t idx, Tape* t) : value_(v), index_(idx), tape_(t) {}

  double value_ = 0.0;
  std::int32_t index_ = -1;
  Tape* tape_ = nullptr;
};

inline double value_of(double x) noexcept { return x; }
inline double value_of(const Var& x) noexcept { return x.value(); }

template <class T>
inline constexpr bool is_var_v = std::is_same_v<std::remove_cvref_t<T>, Var>;

// Elementary functions. Library code calls these through the `ad::` prefix on
// both scalar types so that domain checks are identical on either path.

inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double exp(double x) { return std::exp(x); }
inline double tanh(double x) { return std::tanh(x); }

inline double sqrt(double x) {
  if (x < 0.0) throw DomainError("sqrt of negative value");
  return std::sqrt(x);
}

inline double log(double x) {
  if (!(x > 0.0)) throw DomainError("log of non-positive value");
  return std::log(x);
}

inline double atan2(double y, double x) {
  if (x == 0.0 && y == 0.0) throw DomainError("atan2 at origin");
  return std::atan2(y, x);
}

/// sqrt(x^2 + eps): the only quasi-smooth primitive offered in place of |x|.
inline double abs_smooth(double x, double eps = 1e-12) { return std::sqrt(x * x + eps); }

inline Var sin(const Var& x) { return Var::unary(x, std::sin(x.value()), std::cos(x.value())); }
inline Var cos(const Var& x) { return Var::unary(x, std::cos(x.value()), -std::sin(x.value())); }

inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return Var::unary(x, e, e);
}

inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return Var::unary(x, t, 1.0 - t * t);
}

inline Var sqrt(const Var& x) {
  if (x.value() < 0.0) throw DomainError("sqrt of negative value");
  const double s = std::sqrt(x.value());
  if (s == 0.0) {
    if (x.tracked()) throw DomainError("sqrt derivative undefined at zero");
    return Var(0.0);
  }
  return Var::unary(x, s, 0.5 / s);
}

inline Var log(const Var& x) {
  if (!(x.value() > 0.0)) throw DomainError("log of non-positive value");
  return Var::unary(x, std::log(x.value()), 1.0 / x.value());
}

inline Var atan2(const Var& y, const Var& x) {
  const double yv = y.value();
  const double xv = x.value();
  const double r2 = xv * xv + yv * yv;
  if (r2 == 0.0) throw DomainError("atan2 at origin");
  return Var::binary(y, x, std::atan2(yv, xv), xv / r2, -yv / r2);
}

inline Var abs_smooth(const Var& x, double eps = 1e-12) {
  const double s = std::sqrt(x.value() * x.value() + eps);
  return Var::unary(x, s, x.value() / s);
}

template <class S>
inline S square(const S& x) {
  return x * x;
}

// Programs are generic callables taking `const std::vector<T>&` for T in
// {double, Var} and returning T (scalar programs) or std::vector<T>.

struct GradResult {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Value and exact reverse-mode gradient of a scalar program at `x`.
template <class Program>
GradResult grad(Program&& program, std::span<const double> x) {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(x.size());
  for (double xi : x) inputs.push_back(Var::leaf(tape, xi));
  const Var out = program(static_cast<const std::vector<Var>&>(inputs));
  GradResult result;
  result.value = out.value();
  result.gradient.assign(x.size(), 0.0);
  if (out.tracked()) {
    if (out.tape() != &tape) throw std::logic_error("program output recorded on a foreign tape");
    const auto adj = tape.adjoints(out.index());
    for (std::size_t i = 0; i < inputs.size(); ++i) result.gradient[i] = adj[static_cast<std::size_t>(inputs[i].index())];
  }
  return result;
}

struct JacobianResult {
  std::vector<double> values;
  /// Row-major, values.size() x n.
  std::vector<double> jacobian;
  std::size_t cols = 0;
  double operator()(std::size_t r, std::size_t c) const { return jacobian[r * cols + c]; }
};

/// Jacobian of a vector program: one recording, one backward sweep per output.
template <class Program>
JacobianResult jacobian(Program&& program, std::span<const double> x) {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(x.size());
  for (double xi : x) inputs.push_back(Var::leaf(tape, xi));
  const std::vector<Var> out = program(static_cast<const std::vector<Var>&>(inputs));
  JacobianResult result;
  result.cols = x.size();
  result.values.reserve(out.size());
  result.jacobian.assign(out.size() * x.size(), 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    result.values.push_back(out[r].value());
    if (!out[r].tracked()) continue;
    const auto adj = tape.adjoints(out[r].index());
    for (std::size_t c = 0; c < inputs.size(); ++c)
      result.jacobian[r * x.size() + c] = adj[static_cast<std::size_t>(inputs[c].index())];
  }
  return result;
}

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, component-wise.
/// A non-finite program value is reported as a domain error.
template <class Program>
std::vector<double> finite_diff_gradient(Program&& program, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> g(x.size(), 0.0);
  auto eval = [&](const std::vector<double>& at) {
    const double v = program(at);
    if (!std::isfinite(v)) throw DomainError("program produced a non-finite value");
    return v;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = xp[i];
    xp[i] = xi + h;
    const double fp = eval(xp);
    xp[i] = xi - h;
    const double fm = eval(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Relative central-difference step h = rel * max(1, |x_i|) per component.
template <class Program>
std::vector<double> finite_diff_gradient_relative(Program&& program, std::span<const double> x, double rel = 1e-6) {
  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = xp[i];
    const double h = rel * std::max(1.0, std::abs(xi));
    xp[i] = xi + h;
    const double fp = program(static_cast<const std::vector<double>&>(xp));
    xp[i] = xi - h;
    const double fm = program(static_cast<const std::vector<double>&>(xp));
    xp[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw DomainError("program produced a non-finite value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace diffrbd::ad
