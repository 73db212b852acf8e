#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace elmono {

// Error taxonomy. The CLI maps these onto exit codes (InvalidArgument and
// ConfigError -> 2, SolverError -> 3).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& what, double achieved_residual)
      : std::runtime_error(what), residual(achieved_residual) {}
  double residual;
};

template <int Dim>
using Point = Eigen::Matrix<double, Dim, 1>;

/// Closed axis-aligned box [lo, hi].
template <int Dim>
struct Box {
  Point<Dim> lo;
  Point<Dim> hi;

  static Box unit_centered() {
    return {Point<Dim>::Constant(-0.5), Point<Dim>::Constant(0.5)};
  }

  Point<Dim> extent() const { return hi - lo; }
  Point<Dim> center() const { return 0.5 * (lo + hi); }
  double volume() const { return extent().prod(); }

  bool valid() const { return (hi.array() > lo.array()).all(); }

  bool contains(const Point<Dim>& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }

  bool contains(const Box& other, double tol = 0.0) const {
    return (other.lo.array() >= lo.array() - tol).all() &&
           (other.hi.array() <= hi.array() + tol).all();
  }

  // Volume of the intersection (zero when only boundaries touch).
  double overlap_volume(const Box& other) const {
    double v = 1.0;
    for (int a = 0; a < Dim; ++a) {
      double w = std::min(hi[a], other.hi[a]) - std::max(lo[a], other.lo[a]);
      if (w <= 0.0) return 0.0;
      v *= w;
    }
    return v;
  }

  // Euclidean distance between the two boxes (zero if they touch).
  double distance(const Box& other) const {
    double s = 0.0;
    for (int a = 0; a < Dim; ++a) {
      double gap = std::max({0.0, other.lo[a] - hi[a], lo[a] - other.hi[a]});
      s += gap * gap;
    }
    return std::sqrt(s);
  }

  bool operator==(const Box& o) const { return lo == o.lo && hi == o.hi; }
};

/// Sign of the parameter perturbation probed by a test.
enum class Direction { Raise, Lower };

inline std::string_view to_string(Direction d) {
  return d == Direction::Raise ? "raise" : "lower";
}

inline Direction direction_from_string(std::string_view s) {
  if (s == "raise") return Direction::Raise;
  if (s == "lower") return Direction::Lower;
  throw InvalidArgument("unknown direction '" + std::string(s) + "' (expected raise|lower)");
}

enum class Method { Standard, Linearized };

inline std::string_view to_string(Method m) {
  return m == Method::Standard ? "standard" : "linearized";
}

inline Method method_from_string(std::string_view s) {
  if (s == "standard") return Method::Standard;
  if (s == "linearized") return Method::Linearized;
  throw InvalidArgument("unknown method '" + std::string(s) + "' (expected standard|linearized)");
}

/// Lamé pair (lambda, mu) in Pa.
struct Lame {
  double lambda = 0.0;
  double mu = 0.0;
};

}  // namespace elmono
