#pragma once

// Discretized Neumann-to-Dirichlet matrices over a patch load system,
// difference measurements, standard test-inclusion operators and noise.

#include "elmono/elasticity.hpp"
#include "elmono/hash.hpp"

#include <random>
#include <string>
#include <vector>

namespace elmono {

enum class OperatorKind { Ntd, Difference, Derivative, NoisyDifference };

inline std::string_view to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::Ntd: return "ntd";
    case OperatorKind::Difference: return "difference";
    case OperatorKind::Derivative: return "derivative";
    case OperatorKind::NoisyDifference: return "noisy-difference";
  }
  return "?";
}

inline OperatorKind operator_kind_from_string(std::string_view s) {
  if (s == "ntd") return OperatorKind::Ntd;
  if (s == "difference") return OperatorKind::Difference;
  if (s == "derivative") return OperatorKind::Derivative;
  if (s == "noisy-difference") return OperatorKind::NoisyDifference;
  throw InvalidArgument("unknown operator kind '" + std::string(s) + "'");
}

/// m x m matrix (<g_i, A g_j>) of an operator A over the load system.
struct OperatorMatrix {
  Eigen::MatrixXd entries;
  std::string load_system_id;
  OperatorKind kind = OperatorKind::Ntd;

  Eigen::Index size() const { return entries.rows(); }
};

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

struct NoiseSpec {
  double level = 0.0;
  std::uint64_t seed = 0;
};

/// Load vectors and solutions of one background material, reused by every
/// coupled difference solve against it.
template <int Dim>
struct BackgroundSolutions {
  Lame background;
  std::string load_system_id;
  StiffnessSystem system;
  Eigen::MatrixXd loads_free;          // free-dof load vectors, one column per g_i
  Eigen::MatrixXd displacements_free;  // free-dof u^{g_i}
};

template <int Dim>
BackgroundSolutions<Dim> solve_background(const Mesh<Dim>& mesh, const PatchLayout<Dim>& layout,
                                          double lambda0, double mu0, SolverOptions options = {}) {
  BackgroundSolutions<Dim> bg;
  bg.background = {lambda0, mu0};
  bg.load_system_id = layout_hash(layout);
  bg.system = assemble(mesh, material_background(mesh, lambda0, mu0));
  bg.loads_free = bg.system.dofs.restrict(load_matrix(mesh, layout));
  bg.displacements_free = LinearSolver(bg.system, options).solve_free(bg.loads_free);
  return bg;
}

/// NtD matrix before symmetrization plus the solutions it came from.
struct NtdSolve {
  Eigen::MatrixXd raw;
  Eigen::MatrixXd loads_full;
  Eigen::MatrixXd displacements_full;
};

template <int Dim>
NtdSolve ntd_solve(const Mesh<Dim>& mesh, const MaterialField<Dim>& material,
                   const PatchLayout<Dim>& layout, SolverOptions options = {}) {
  const auto system = assemble(mesh, material);
  NtdSolve out;
  out.loads_full = load_matrix(mesh, layout);
  out.displacements_full = LinearSolver(system, options).solve_full(out.loads_full);
  out.raw = out.loads_full.transpose() * out.displacements_full;
  return out;
}

/// Entry (i, j) = ∫_{Γ_N} g_i · u^{g_j} ds, symmetrized.
template <int Dim>
OperatorMatrix ntd_matrix(const Mesh<Dim>& mesh, const MaterialField<Dim>& material,
                          const PatchLayout<Dim>& layout, SolverOptions options = {}) {
  return {symmetrized(ntd_solve(mesh, material, layout, options).raw), layout_hash(layout),
          OperatorKind::Ntd};
}

/// Λ̄(λ0, μ0) − Λ̄(λ, μ) for a material that differs from the background of
/// `bg` on a few elements, via the coupled system  K v = (K − K0) u0  with
/// v = u0 − u, so no cancellation of two full NtD matrices is needed.
template <int Dim>
Eigen::MatrixXd coupled_difference(const Mesh<Dim>& mesh, const BackgroundSolutions<Dim>& bg,
                                   const MaterialField<Dim>& material, SolverOptions options = {}) {
  material.validate(mesh.num_elements());
  std::vector<std::pair<int, double>> support;
  std::vector<double> dl(mesh.num_elements(), 0.0), dm(mesh.num_elements(), 0.0);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    dl[e] = material.lambda[e] - bg.background.lambda;
    dm[e] = material.mu[e] - bg.background.mu;
    if (dl[e] != 0.0 || dm[e] != 0.0) support.emplace_back(static_cast<int>(e), 1.0);
  }
  const int m = static_cast<int>(bg.loads_free.cols());
  if (support.empty()) return Eigen::MatrixXd::Zero(m, m);
  const SparseMatrix dK = assemble_weighted<Dim>(mesh, bg.system.dofs, dl, dm, support);
  StiffnessSystem perturbed{bg.system.matrix + dK, bg.system.dofs};
  const Eigen::MatrixXd rhs = dK * bg.displacements_free;
  const Eigen::MatrixXd v = LinearSolver(perturbed, options).solve_free(rhs);
  return bg.loads_free.transpose() * v;
}

enum class DifferencePath { Coupled, Subtraction };

/// Simulated difference measurement Λ̄_D = Λ̄(λ0, μ0) − Λ̄(λ, μ).
template <int Dim>
OperatorMatrix difference_measurement(const Mesh<Dim>& mesh, double lambda0, double mu0,
                                      const std::vector<Inclusion<Dim>>& inclusions,
                                      const PatchLayout<Dim>& layout,
                                      DifferencePath path = DifferencePath::Coupled,
                                      SolverOptions options = {}) {
  const auto material = material_with_inclusions(mesh, lambda0, mu0, inclusions);
  OperatorMatrix out;
  out.kind = OperatorKind::Difference;
  out.load_system_id = layout_hash(layout);
  if (path == DifferencePath::Coupled) {
    const auto bg = solve_background(mesh, layout, lambda0, mu0, options);
    out.entries = symmetrized(coupled_difference(mesh, bg, material, options));
  } else {
    out.entries = ntd_matrix(mesh, material_background(mesh, lambda0, mu0), layout, options).entries -
                  ntd_matrix(mesh, material, layout, options).entries;
  }
  return out;
}

/// Background field with (λ0 ± α, μ0 ± β) on the cube, blended by volume
/// fraction on partially covered elements.
template <int Dim>
MaterialField<Dim> test_inclusion_material(const Mesh<Dim>& mesh, double lambda0, double mu0,
                                           const Box<Dim>& cube, double alpha, double beta,
                                           Direction direction, int depth = 3) {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
    throw InvalidArgument("test inclusion contrasts need alpha, beta >= 0 and alpha + beta > 0");
  const double sign = direction == Direction::Raise ? 1.0 : -1.0;
  if (direction == Direction::Lower && (lambda0 - alpha <= 0.0 || mu0 - beta <= 0.0))
    throw InvalidArgument("lowering by the test contrasts makes the Lamé parameters non-positive");
  auto f = material_background(mesh, lambda0, mu0);
  for (const auto& [e, frac] : region_support(mesh, std::vector<Box<Dim>>{cube}, depth)) {
    f.lambda[e] += sign * frac * alpha;
    f.mu[e] += sign * frac * beta;
  }
  return f;
}

/// Λ̄_k = Λ̄(λ0, μ0) − Λ̄(λ0 ± α χ_B, μ0 ± β χ_B) on the mesh of `bg`.
template <int Dim>
OperatorMatrix test_operator_standard(const Mesh<Dim>& mesh, const BackgroundSolutions<Dim>& bg,
                                      const Box<Dim>& cube, double alpha, double beta,
                                      Direction direction, SolverOptions options = {}, int depth = 3) {
  const auto material = test_inclusion_material(mesh, bg.background.lambda, bg.background.mu, cube,
                                                 alpha, beta, direction, depth);
  return {symmetrized(coupled_difference(mesh, bg, material, options)), bg.load_system_id,
          OperatorKind::Difference};
}

template <int Dim>
OperatorMatrix test_operator_standard(const Mesh<Dim>& mesh, double lambda0, double mu0,
                                      const PatchLayout<Dim>& layout, const Box<Dim>& cube,
                                      double alpha, double beta, Direction direction,
                                      SolverOptions options = {}) {
  // Validate before paying for the background solves.
  test_inclusion_material(mesh, lambda0, mu0, cube, alpha, beta, direction);
  const auto bg = solve_background(mesh, layout, lambda0, mu0, options);
  return test_operator_standard(mesh, bg, cube, alpha, beta, direction, options);
}

/// Λ̄^δ = Λ̄ + level (Λ̄_ij E_ij) with E_ij uniform on [−1, 1], symmetrized.
inline OperatorMatrix add_noise(const OperatorMatrix& matrix, const NoiseSpec& spec) {
  if (!(spec.level >= 0.0)) throw InvalidArgument("noise level must be >= 0");
  OperatorMatrix out = matrix;
  out.kind = OperatorKind::NoisyDifference;
  if (spec.level == 0.0) return out;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const Eigen::Index m = matrix.size();
  Eigen::MatrixXd e(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) e(i, j) = unif(rng);
  out.entries = symmetrized(matrix.entries + spec.level * matrix.entries.cwiseProduct(e));
  return out;
}

}  // namespace elmono
