#pragma once

// Monotonicity tests (standard and linearized, raise and lower direction)
// as eigenvalue checks on the load-system matrices.

#include "elmono/ntd.hpp"
#include "elmono/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <limits>

#include <map>
#include <optional>
#include <vector>

namespace elmono {

namespace detail {

inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("eigenvalue test needs a square matrix");
  if (!a.allFinite()) throw InvalidArgument("eigenvalue test: matrix has non-finite entries");
  if (a.rows() == 0) throw InvalidArgument("eigenvalue test: empty matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(a), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("symmetric eigensolver did not converge", 0.0);
  return es.eigenvalues();  // ascending
}

}  // namespace detail

/// Smallest eigenvalue of (A + Aᵀ)/2.
inline double min_eigenvalue(const Eigen::MatrixXd& a) { return detail::symmetric_eigenvalues(a)(0); }
inline double min_eigenvalue(const OperatorMatrix& a) { return min_eigenvalue(a.entries); }

inline double max_eigenvalue(const Eigen::MatrixXd& a) {
  const auto ev = detail::symmetric_eigenvalues(a);
  return ev(ev.size() - 1);
}

inline double spectral_norm(const Eigen::MatrixXd& a) {
  const auto ev = detail::symmetric_eigenvalues(a);
  return std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
}

/// Test cube with its contrasts.
template <int Dim>
struct TestInclusion {
  Box<Dim> cube;
  double alpha = 0.0;
  double beta = 0.0;
  Direction direction = Direction::Raise;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
      throw InvalidArgument("test inclusion needs alpha, beta >= 0 and alpha + beta > 0");
  }
};

/// Largest admissible contrasts (alpha, beta) for a method, direction and
/// known background/inclusion Lamé pairs.
inline Lame contrast_bound(Method method, Direction direction, Lame background, Lame inclusion) {
  const double l0 = background.lambda, m0 = background.mu, l1 = inclusion.lambda, m1 = inclusion.mu;
  if (direction == Direction::Raise) {
    if (!(l1 > l0) || !(m1 > m0))
      throw InvalidArgument("raise direction needs inclusion parameters above the background");
    if (method == Method::Standard) return {l1 - l0, m1 - m0};
    return {l0 / l1 * (l1 - l0), m0 / m1 * (m1 - m0)};
  }
  if (!(l1 < l0) || !(m1 < m0))
    throw InvalidArgument("lower direction needs inclusion parameters below the background");
  return {l0 - l1, m0 - m1};
}

struct CubeRecord {
  int index = 0;
  // Smallest eigenvalue of the oriented, δ-shifted test matrix:
  //   raise: λ_min(A + δI),   lower: λ_min(δI − A) = −λ_max(A − δI),
  // so that inside ⇔ min_eigenvalue ≥ 0 in both directions.
  double min_eigenvalue = 0.0;
  bool inside = false;
};

struct ReconstructionResult {
  Method method = Method::Standard;
  Direction direction = Direction::Raise;
  double delta = 0.0;
  NoiseSpec noise;
  std::vector<CubeRecord> cubes;

  std::vector<char> mask() const {
    std::vector<char> m(cubes.size());
    for (std::size_t k = 0; k < cubes.size(); ++k) m[k] = cubes[k].inside;
    return m;
  }
  std::size_t inside_count() const {
    std::size_t n = 0;
    for (const auto& c : cubes) n += c.inside;
    return n;
  }
};

namespace detail {

inline void check_compatible(const OperatorMatrix& measurement, const std::vector<OperatorMatrix>& ops,
                             double delta, OperatorKind expected) {
  if (!(delta >= 0.0)) throw InvalidArgument("delta must be >= 0");
  if (measurement.kind != OperatorKind::Difference && measurement.kind != OperatorKind::NoisyDifference)
    throw InvalidArgument("measurement must be a (noisy) difference matrix, got " +
                          std::string(to_string(measurement.kind)));
  for (std::size_t k = 0; k < ops.size(); ++k) {
    if (ops[k].size() != measurement.size())
      throw InvalidArgument("test operator " + std::to_string(k) + " has size " +
                            std::to_string(ops[k].size()) + ", measurement has " +
                            std::to_string(measurement.size()));
    if (ops[k].kind != expected)
      throw InvalidArgument("test operator " + std::to_string(k) + " has kind " +
                            std::string(to_string(ops[k].kind)) + ", expected " +
                            std::string(to_string(expected)));
    if (!measurement.load_system_id.empty() && !ops[k].load_system_id.empty() &&
        ops[k].load_system_id != measurement.load_system_id)
      throw InvalidArgument("test operator " + std::to_string(k) + " uses a different load system");
  }
}

// sign = -1: A = Λ^δ − op; sign = +1: A = Λ^δ + op.
inline ReconstructionResult run_test(const OperatorMatrix& measurement, const std::vector<OperatorMatrix>& ops,
                                     double delta, Direction direction, double sign, unsigned workers) {
  ReconstructionResult r;
  r.direction = direction;
  r.delta = delta;
  r.cubes.resize(ops.size());
  const Eigen::MatrixXd meas = symmetrized(measurement.entries);
  parallel_for(ops.size(), workers, [&](std::size_t k) {
    const Eigen::MatrixXd a = meas + sign * symmetrized(ops[k].entries);
    const auto ev = symmetric_eigenvalues(a);
    const double value = direction == Direction::Raise ? ev(0) + delta : delta - ev(ev.size() - 1);
    r.cubes[k] = {static_cast<int>(k), value, value >= 0.0};
  });
  return r;
}

}  // namespace detail

/// Standard test: raise ⇔ λ_min(Λ^δ − Λ_k + δI) ≥ 0, lower ⇔
/// λ_max(Λ^δ − Λ_k − δI) ≤ 0, with Λ_k = Λ(λ0, μ0) − Λ(λ0 ± α χ_B, μ0 ± β χ_B).
/// For lower tests Λ^δ − Λ_k = Λ(λ0 − α χ_B, μ0 − β χ_B) − Λ(λ, μ).
inline ReconstructionResult standard_test(const OperatorMatrix& measurement,
                                          const std::vector<OperatorMatrix>& test_ops, double delta,
                                          Direction direction, unsigned workers = 1) {
  detail::check_compatible(measurement, test_ops, delta, OperatorKind::Difference);
  auto r = detail::run_test(measurement, test_ops, delta, direction, -1.0, workers);
  r.method = Method::Standard;
  return r;
}

/// Linearized test: raise ⇔ λ_min(Λ^δ + Λ'_k + δI) ≥ 0, lower ⇔
/// λ_max(Λ^δ − Λ'_k − δI) ≤ 0, where Λ'_k is the derivative in the direction
/// (α χ_B, β χ_B) and is negative semidefinite.
inline ReconstructionResult linearized_test(const OperatorMatrix& measurement,
                                            const std::vector<OperatorMatrix>& derivative_ops, double delta,
                                            Direction direction, unsigned workers = 1) {
  detail::check_compatible(measurement, derivative_ops, delta, OperatorKind::Derivative);
  const double sign = direction == Direction::Raise ? 1.0 : -1.0;
  auto r = detail::run_test(measurement, derivative_ops, delta, direction, sign, workers);
  r.method = Method::Linearized;
  return r;
}

/// Default δ: the measured noise bound when the noiseless data is known,
/// otherwise a fraction of the largest |eigenvalue| of the noisy data.
inline double default_delta(const OperatorMatrix& measurement, const OperatorMatrix* noiseless = nullptr,
                            double heuristic_fraction = 5e-4) {
  if (noiseless) return spectral_norm(measurement.entries - noiseless->entries);
  return heuristic_fraction * spectral_norm(measurement.entries);
}

template <int Dim>
struct TruthReport {
  std::size_t inside_cubes = 0;   // cubes with B ⊆ D
  std::size_t flagged_inside = 0;
  double recall_inside = 1.0;     // vacuously 1 without inside cubes
  struct FalsePositive {
    int index;
    double distance;
  };
  std::vector<FalsePositive> false_positives;
  std::map<int, int> distance_histogram;  // bin (0.1 domain widths) -> count
};

/// B ⊆ D for D a union of pairwise disjoint boxes.
template <int Dim>
bool cube_inside_union(const Box<Dim>& cube, const std::vector<Box<Dim>>& boxes) {
  double covered = 0.0;
  for (const auto& b : boxes) covered += cube.overlap_volume(b);
  return covered >= cube.volume() * (1.0 - 1e-9);
}

template <int Dim>
double distance_to_union(const Box<Dim>& cube, const std::vector<Box<Dim>>& boxes) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& b : boxes) d = std::min(d, cube.distance(b));
  return d;
}

template <int Dim>
TruthReport<Dim> classify_against_truth(const ReconstructionResult& result, const std::vector<Box<Dim>>& cubes,
                                        const std::vector<Box<Dim>>& truth, double domain_width = 1.0) {
  if (cubes.size() != result.cubes.size())
    throw InvalidArgument("classify_against_truth: cube list does not match the result");
  TruthReport<Dim> rep;
  for (std::size_t k = 0; k < cubes.size(); ++k) {
    const bool in_truth = cube_inside_union(cubes[k], truth);
    const bool flagged = result.cubes[k].inside;
    if (in_truth) {
      ++rep.inside_cubes;
      rep.flagged_inside += flagged;
    } else if (flagged) {
      const double d = truth.empty() ? std::numeric_limits<double>::infinity() : distance_to_union(cubes[k], truth);
      rep.false_positives.push_back({static_cast<int>(k), d});
      const int bin = std::isfinite(d) ? static_cast<int>(std::floor(d / domain_width / 0.1)) : -1;
      rep.distance_histogram[bin] += 1;
    }
  }
  if (rep.inside_cubes > 0)
    rep.recall_inside = static_cast<double>(rep.flagged_inside) / static_cast<double>(rep.inside_cubes);
  return rep;
}

}  // namespace elmono
