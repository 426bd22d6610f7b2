#pragma once

// Minimal reverse-mode tape over scalars plus a central-difference gradient
// checker. The tape is the reference route used to validate the hand-derived
// backward passes in the training path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pfa/common.hpp"

namespace pfa {

class Tape;

/// Handle to a scalar node on a Tape.
class Var {
 public:
  Var() = default;
  double value() const;
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Adjoints of every node after a backward sweep.
class Gradients {
 public:
  explicit Gradients(std::vector<double> adj) : adj_(std::move(adj)) {}
  double operator[](const Var& v) const { return adj_[v.id()]; }
  std::vector<double> of(std::span<const Var> vars) const {
    std::vector<double> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(adj_[v.id()]);
    return out;
  }

 private:
  std::vector<double> adj_;
};

/// Records primitive operations in creation order, which is a topological
/// order of the graph. Each node has at most two parents with cached local
/// partial derivatives.
class Tape {
 public:
  static constexpr std::uint32_t kNoParent = std::numeric_limits<std::uint32_t>::max();

  Var variable(double value) { return push(value, kNoParent, 0.0, kNoParent, 0.0); }

  std::vector<Var> variables(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double x : values) out.push_back(variable(x));
    return out;
  }

  Var unary(const Var& a, double value, double da) { return push(value, a.id(), da, kNoParent, 0.0); }
  Var binary(const Var& a, const Var& b, double value, double da, double db) {
    return push(value, a.id(), da, b.id(), db);
  }

  double value(std::uint32_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Reverse accumulation from a scalar root. Visits each node once, in
  /// reverse creation order. Throws NumericError naming the earliest node
  /// whose value is not finite, or the first non-finite adjoint.
  Gradients backward(const Var& root) const {
    if (root.tape() != this) throw Error("backward: root belongs to a different tape");
    for (std::size_t i = 0; i <= root.id(); ++i)
      if (!std::isfinite(nodes_[i].value))
        throw NumericError("backward: non-finite value at node " + std::to_string(i));
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[root.id()] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      const double g = adj[i];
      if (g == 0.0) continue;
      if (!std::isfinite(g)) throw NumericError("backward: non-finite adjoint at node " + std::to_string(i));
      if (n.lhs != kNoParent) adj[n.lhs] += g * n.dlhs;
      if (n.rhs != kNoParent) adj[n.rhs] += g * n.drhs;
    }
    return Gradients(std::move(adj));
  }

  /// Tensor-shaped roots are only differentiable when they hold one element.
  Gradients backward(std::span<const Var> root) const {
    if (root.size() != 1)
      throw Error("backward: root must be scalar, got " + std::to_string(root.size()) + " elements");
    return backward(root[0]);
  }

 private:
  struct Node {
    double value;
    std::uint32_t lhs;
    std::uint32_t rhs;
    double dlhs;
    double drhs;
  };

  Var push(double value, std::uint32_t lhs, double dlhs, std::uint32_t rhs, double drhs) {
    nodes_.push_back({value, lhs, rhs, dlhs, drhs});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
};

inline double Var::value() const { return tape_->value(id_); }

inline Var operator+(const Var& a, const Var& b) { return a.tape()->binary(a, b, a.value() + b.value(), 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return a.tape()->binary(a, b, a.value() - b.value(), 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) {
  return a.tape()->binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return a.tape()->binary(a, b, q, 1.0 / b.value(), -q / b.value());
}
inline Var operator-(const Var& a) { return a.tape()->unary(a, -a.value(), -1.0); }

inline Var operator+(const Var& a, double c) { return a.tape()->unary(a, a.value() + c, 1.0); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a.tape()->unary(a, a.value() - c, 1.0); }
inline Var operator-(double c, const Var& a) { return a.tape()->unary(a, c - a.value(), -1.0); }
inline Var operator*(const Var& a, double c) { return a.tape()->unary(a, a.value() * c, c); }
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a.tape()->unary(a, a.value() / c, 1.0 / c); }
inline Var operator/(double c, const Var& a) {
  const double q = c / a.value();
  return a.tape()->unary(a, q, -q / a.value());
}

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator+=(Var& a, double c) { return a = a + c; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var log(const Var& a) { return a.tape()->unary(a, std::log(a.value()), 1.0 / a.value()); }
inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return a.tape()->unary(a, e, e);
}
inline Var exp2(const Var& a) {
  const double e = std::exp2(a.value());
  return a.tape()->unary(a, e, e * kLn2);
}
inline Var atan(const Var& a) {
  const double x = a.value();
  return a.tape()->unary(a, std::atan(x), 1.0 / (1.0 + x * x));
}
inline Var relu(const Var& a) { return a.tape()->unary(a, a.value() > 0.0 ? a.value() : 0.0, a.value() > 0.0 ? 1.0 : 0.0); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// Sum of a non-empty vector of tape variables.
inline Var sum(std::span<const Var> v) {
  if (v.empty()) throw Error("sum: empty input");
  Var acc = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
  return acc;
}

struct FdCoordinate {
  double analytic;
  double numeric;
  double rel_error;
  bool pass;
};

struct FdReport {
  std::vector<FdCoordinate> coords;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct FdOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  double floor = 1e-8;
};

/// Compares `analytic` with central differences of `f` at `theta`.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> theta, std::span<const double> analytic,
                                  FdOptions opt = {}) {
  if (analytic.size() != theta.size()) throw Error("finite_diff_check: gradient size mismatch");
  FdReport report;
  std::vector<double> x(theta.begin(), theta.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + opt.eps;
    const double fp = f(x);
    x[i] = orig - opt.eps;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: f is not finite near coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * opt.eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    const bool ok = rel <= opt.tol;
    report.coords.push_back({analytic[i], numeric, rel, ok});
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.passed = report.passed && ok;
  }
  return report;
}

}  // namespace pfa
