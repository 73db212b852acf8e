#pragma once

// Fréchet derivative of the NtD map at a homogeneous background, evaluated
// for test cubes from cached background strains.

#include "elmono/ntd.hpp"
#include "elmono/parallel.hpp"

#include <memory>

namespace elmono {

template <int Dim>
inline constexpr int kVoigtSize = Dim * (Dim + 1) / 2;

/// Background solutions u^{g_i}_{(λ0, μ0)} with per-element strains cached in
/// scaled Voigt form, so that a dot product of two columns equals ε_i : ε_j.
template <int Dim>
struct BackgroundSolutionBank {
  std::shared_ptr<const Mesh<Dim>> mesh;
  BackgroundSolutions<Dim> solutions;
  std::shared_ptr<const LinearSolver> solver;
  Eigen::MatrixXd strains;      // (elements * kVoigtSize) x m
  Eigen::MatrixXd divergences;  // elements x m

  int load_count() const { return static_cast<int>(solutions.loads_free.cols()); }

  Eigen::MatrixXd displacements_full() const {
    return solutions.system.dofs.expand(solutions.displacements_free);
  }
};

namespace detail {

template <int Dim>
void fill_strain_cache(BackgroundSolutionBank<Dim>& bank) {
  const auto& mesh = *bank.mesh;
  const Eigen::MatrixXd U = bank.displacements_full();
  const int m = static_cast<int>(U.cols());
  constexpr int kV = kVoigtSize<Dim>;
  bank.strains.resize(static_cast<Eigen::Index>(mesh.num_elements()) * kV, m);
  bank.divergences.resize(static_cast<Eigen::Index>(mesh.num_elements()), m);
  const double r2 = std::sqrt(2.0);
  for (int j = 0; j < m; ++j) {
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
      const auto G = element_displacement_gradient<Dim>(mesh, e, U.col(j));
      const auto E = 0.5 * (G + G.transpose());
      int r = 0;
      for (int a = 0; a < Dim; ++a) bank.strains(e * kV + r++, j) = E(a, a);
      for (int a = 0; a < Dim; ++a)
        for (int b = a + 1; b < Dim; ++b) bank.strains(e * kV + r++, j) = r2 * E(a, b);
      bank.divergences(e, j) = G.trace();
    }
  }
}

}  // namespace detail

template <int Dim>
BackgroundSolutionBank<Dim> build_solution_bank(std::shared_ptr<const Mesh<Dim>> mesh, double lambda0,
                                                double mu0, const PatchLayout<Dim>& layout,
                                                SolverOptions options = {}, unsigned workers = 1) {
  BackgroundSolutionBank<Dim> bank;
  bank.mesh = std::move(mesh);
  auto& s = bank.solutions;
  s.background = {lambda0, mu0};
  s.load_system_id = layout_hash(layout);
  s.system = assemble(*bank.mesh, material_background(*bank.mesh, lambda0, mu0));
  s.loads_free = s.system.dofs.restrict(load_matrix(*bank.mesh, layout));
  bank.solver = std::make_shared<LinearSolver>(s.system, options);
  const Eigen::Index m = s.loads_free.cols();
  s.displacements_free.resize(s.loads_free.rows(), m);
  parallel_for(static_cast<std::size_t>(m), workers, [&](std::size_t j) {
    s.displacements_free.col(j) = bank.solver->solve_free(s.loads_free.col(j));
  });
  detail::fill_strain_cache(bank);
  return bank;
}

template <int Dim>
BackgroundSolutionBank<Dim> build_solution_bank(const Mesh<Dim>& mesh, double lambda0, double mu0,
                                                const PatchLayout<Dim>& layout, SolverOptions options = {},
                                                unsigned workers = 1) {
  return build_solution_bank(std::make_shared<const Mesh<Dim>>(mesh), lambda0, mu0, layout, options,
                             workers);
}

/// Λ̄'_k with entries −∫_B 2β ε(u_i):ε(u_j) + α div u_i div u_j dx, written as
/// −SᵀS with S stacking the fraction- and volume-weighted cached strains of
/// the cube's elements; symmetric and negative semidefinite by construction.
template <int Dim>
OperatorMatrix frechet_matrix(const BackgroundSolutionBank<Dim>& bank, const Box<Dim>& cube, double alpha,
                              double beta, int depth = 3) {
  const auto& mesh = *bank.mesh;
  if (!(alpha >= 0.0) || !(beta >= 0.0))
    throw InvalidArgument("frechet_matrix: contrasts must be non-negative");
  if (!cube.valid() || !mesh.box.contains(cube, 1e-12 * mesh.box.extent().maxCoeff()))
    throw InvalidArgument("frechet_matrix: cube is empty or outside the domain");
  const int m = bank.load_count();
  constexpr int kV = kVoigtSize<Dim>;
  const auto support = region_support(mesh, std::vector<Box<Dim>>{cube}, depth);
  Eigen::MatrixXd S(static_cast<Eigen::Index>(support.size()) * (kV + 1), m);
  Eigen::Index row = 0;
  for (const auto& [e, frac] : support) {
    const double w = frac * mesh.volumes[e];
    const double sb = std::sqrt(2.0 * beta * w), sa = std::sqrt(alpha * w);
    S.middleRows(row, kV) = sb * bank.strains.middleRows(static_cast<Eigen::Index>(e) * kV, kV);
    S.row(row + kV) = sa * bank.divergences.row(e);
    row += kV + 1;
  }
  Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(m, m);
  // Eigen's blocked rank update divides by the inner size.
  if (S.rows() > 0) lower.selfadjointView<Eigen::Lower>().rankUpdate(S.transpose(), -1.0);
  OperatorMatrix out;
  out.entries = lower.selfadjointView<Eigen::Lower>();
  out.load_system_id = bank.solutions.load_system_id;
  out.kind = OperatorKind::Derivative;
  return out;
}

/// Column j of Λ̄'_k through the adjoint route: solve
///   a_{(λ0,μ0)}(v, w) = −∫_B 2β ε(u_j):ε(w) + α div u_j div w dx
/// and return the boundary pairings <g_i, v>. Verification only.
template <int Dim>
Eigen::VectorXd frechet_column_via_adjoint(const BackgroundSolutionBank<Dim>& bank, const Box<Dim>& cube,
                                           double alpha, double beta, int column, int depth = 3) {
  const auto& mesh = *bank.mesh;
  const auto support = region_support(mesh, std::vector<Box<Dim>>{cube}, depth);
  const std::vector<double> a(mesh.num_elements(), alpha), b(mesh.num_elements(), beta);
  const SparseMatrix Khat = assemble_weighted<Dim>(mesh, bank.solutions.system.dofs, a, b, support);
  const Eigen::VectorXd rhs = -(Khat * bank.solutions.displacements_free.col(column));
  const Eigen::VectorXd v = bank.solver->solve_free(rhs);
  return bank.solutions.loads_free.transpose() * v;
}

}  // namespace elmono
