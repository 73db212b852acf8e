#pragma once

// Piecewise-linear finite elements for isotropic linear elasticity with
// piecewise-constant Lamé coefficients and patchwise constant tractions.

#include "elmono/mesh.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace elmono {

/// Per-element Lamé coefficients.
template <int Dim>
struct MaterialField {
  std::vector<double> lambda;
  std::vector<double> mu;

  std::size_t size() const { return lambda.size(); }

  // Strict positivity with floor eps_min (default 1e-12 * largest value).
  void validate(std::size_t element_count, double eps_min = -1.0) const {
    if (lambda.size() != element_count || mu.size() != element_count)
      throw InvalidArgument("material field length does not match element count");
    double top = 0.0;
    for (std::size_t e = 0; e < lambda.size(); ++e) {
      if (!std::isfinite(lambda[e]) || !std::isfinite(mu[e]))
        throw InvalidArgument("material field has non-finite entries");
      top = std::max({top, lambda[e], mu[e]});
    }
    const double floor = eps_min > 0.0 ? eps_min : 1e-12 * top;
    for (std::size_t e = 0; e < lambda.size(); ++e)
      if (!(lambda[e] >= floor && mu[e] >= floor) || lambda[e] <= 0.0 || mu[e] <= 0.0)
        throw InvalidArgument("material field must be strictly positive (element " +
                              std::to_string(e) + ")");
  }
};

template <int Dim>
struct Inclusion {
  Box<Dim> box;
  Lame value;
};

template <int Dim>
MaterialField<Dim> material_background(const Mesh<Dim>& mesh, double lambda0, double mu0) {
  if (!(lambda0 > 0.0) || !(mu0 > 0.0))
    throw InvalidArgument("material_background: Lamé parameters must be positive");
  MaterialField<Dim> f;
  f.lambda.assign(mesh.num_elements(), lambda0);
  f.mu.assign(mesh.num_elements(), mu0);
  return f;
}

/// Background (lambda0, mu0) with box inclusions. Elements partially covered
/// by an inclusion get fraction * inside + (1 - fraction) * background.
template <int Dim>
MaterialField<Dim> material_with_inclusions(const Mesh<Dim>& mesh, double lambda0, double mu0,
                                            const std::vector<Inclusion<Dim>>& inclusions,
                                            int depth = 3) {
  MaterialField<Dim> f = material_background(mesh, lambda0, mu0);
  const double tol = 1e-12 * mesh.box.extent().maxCoeff();
  for (std::size_t i = 0; i < inclusions.size(); ++i) {
    const auto& inc = inclusions[i];
    if (!(inc.value.lambda > 0.0) || !(inc.value.mu > 0.0))
      throw InvalidArgument("material_with_inclusions: inclusion parameters must be positive");
    if (!inc.box.valid() || !mesh.box.contains(inc.box, tol))
      throw InvalidArgument("material_with_inclusions: inclusion box " + std::to_string(i) +
                            " is empty or leaves the domain");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& other = inclusions[j];
      if (inc.box.overlap_volume(other.box) > 0.0 &&
          (inc.value.lambda != other.value.lambda || inc.value.mu != other.value.mu))
        throw InvalidArgument("material_with_inclusions: overlapping inclusions " + std::to_string(j) +
                              " and " + std::to_string(i) + " have conflicting values");
    }
  }
  // Group by value so overlapping boxes with equal values are handled as a union.
  std::map<std::pair<double, double>, std::vector<Box<Dim>>> groups;
  for (const auto& inc : inclusions) groups[{inc.value.lambda, inc.value.mu}].push_back(inc.box);
  for (const auto& [value, boxes] : groups) {
    for (const auto& [e, frac] : region_support(mesh, boxes, depth)) {
      f.lambda[e] += frac * (value.first - lambda0);
      f.mu[e] += frac * (value.second - mu0);
    }
  }
  return f;
}

/// Constant traction on one patch, zero elsewhere on the Neumann boundary.
template <int Dim>
struct BoundaryLoad {
  int patch_id = 0;
  Point<Dim> traction = Point<Dim>::Zero();

  // The unit outward normal of the patch's face.
  static BoundaryLoad normal(const PatchLayout<Dim>& layout, int patch_id) {
    return {patch_id, outward_normal<Dim>(layout.patch(patch_id).face)};
  }
};

/// Nodal displacements, vertex-major (vertex * Dim + component).
template <int Dim>
struct DisplacementField {
  Eigen::VectorXd values;

  Point<Dim> at(std::size_t vertex) const { return values.template segment<Dim>(vertex * Dim); }
};

/// Free (non-Dirichlet) degrees of freedom.
struct DofMap {
  std::vector<int> free_index;  // full dof -> free dof or -1
  std::vector<int> full_index;  // free dof -> full dof

  int num_free() const { return static_cast<int>(full_index.size()); }
  int num_full() const { return static_cast<int>(free_index.size()); }

  Eigen::VectorXd restrict(const Eigen::VectorXd& full) const {
    Eigen::VectorXd r(full_index.size());
    for (std::size_t i = 0; i < full_index.size(); ++i) r[i] = full[full_index[i]];
    return r;
  }

  Eigen::MatrixXd restrict(const Eigen::MatrixXd& full) const {
    Eigen::MatrixXd r(full_index.size(), full.cols());
    for (std::size_t i = 0; i < full_index.size(); ++i) r.row(i) = full.row(full_index[i]);
    return r;
  }

  Eigen::VectorXd expand(const Eigen::VectorXd& free) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(free_index.size());
    for (std::size_t i = 0; i < full_index.size(); ++i) f[full_index[i]] = free[i];
    return f;
  }

  Eigen::MatrixXd expand(const Eigen::MatrixXd& free) const {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(free_index.size(), free.cols());
    for (std::size_t i = 0; i < full_index.size(); ++i) f.row(full_index[i]) = free.row(i);
    return f;
  }
};

template <int Dim>
DofMap make_dof_map(const Mesh<Dim>& mesh) {
  DofMap map;
  map.free_index.assign(mesh.num_vertices() * Dim, -1);
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    if (mesh.dirichlet_vertex[v]) continue;
    for (int c = 0; c < Dim; ++c) {
      map.free_index[v * Dim + c] = static_cast<int>(map.full_index.size());
      map.full_index.push_back(static_cast<int>(v * Dim + c));
    }
  }
  return map;
}

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Stiffness matrix restricted to the free dofs.
struct StiffnessSystem {
  SparseMatrix matrix;
  DofMap dofs;
};

template <int Dim>
using ElementMatrix = Eigen::Matrix<double, (Dim + 1) * Dim, (Dim + 1) * Dim>;

/// Exact element matrix of  ∫ 2 mu ε(u):ε(v) + lambda div u div v  for P1
/// basis functions; local dof (a, i) maps to row a * Dim + i.
template <int Dim>
ElementMatrix<Dim> element_stiffness(const typename Mesh<Dim>::Gradients& g, double volume,
                                     double lambda, double mu) {
  ElementMatrix<Dim> k;
  for (int a = 0; a <= Dim; ++a)
    for (int b = 0; b <= a; ++b) {
      const double gg = g.row(a).dot(g.row(b));
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) {
          double v = mu * g(a, j) * g(b, i) + lambda * g(a, i) * g(b, j);
          if (i == j) v += mu * gg;
          k(a * Dim + i, b * Dim + j) = volume * v;
        }
    }
  // Mirror the computed lower block triangle so the matrix is exactly symmetric.
  for (int a = 0; a <= Dim; ++a)
    for (int b = a + 1; b <= Dim; ++b)
      for (int i = 0; i < Dim; ++i)
        for (int j = 0; j < Dim; ++j) k(a * Dim + i, b * Dim + j) = k(b * Dim + j, a * Dim + i);
  return k;
}

namespace detail {

template <int Dim>
SparseMatrix assemble_impl(const Mesh<Dim>& mesh, std::span<const double> lambda,
                           std::span<const double> mu, const DofMap* dofs,
                           const std::vector<std::pair<int, double>>* support) {
  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> triplets;
  const std::size_t ne = support ? support->size() : mesh.num_elements();
  constexpr int kLocal = (Dim + 1) * Dim;
  triplets.reserve(ne * kLocal * kLocal);
  for (std::size_t s = 0; s < ne; ++s) {
    const int e = support ? (*support)[s].first : static_cast<int>(s);
    const double w = support ? (*support)[s].second : 1.0;
    const auto k = element_stiffness<Dim>(mesh.gradients[e], w * mesh.volumes[e], lambda[e], mu[e]);
    const auto& el = mesh.elements[e];
    for (int a = 0; a <= Dim; ++a)
      for (int i = 0; i < Dim; ++i) {
        int r = el[a] * Dim + i;
        if (dofs) r = dofs->free_index[r];
        if (r < 0) continue;
        for (int b = 0; b <= Dim; ++b)
          for (int j = 0; j < Dim; ++j) {
            int c = el[b] * Dim + j;
            if (dofs) c = dofs->free_index[c];
            if (c < 0) continue;
            triplets.emplace_back(r, c, k(a * Dim + i, b * Dim + j));
          }
      }
  }
  const int n = dofs ? dofs->num_free() : static_cast<int>(mesh.num_vertices() * Dim);
  SparseMatrix K(n, n);
  K.setFromTriplets(triplets.begin(), triplets.end());
  return K;
}

}  // namespace detail

/// Global stiffness matrix over all vertex dofs, before Dirichlet elimination.
template <int Dim>
SparseMatrix assemble_unconstrained(const Mesh<Dim>& mesh, const MaterialField<Dim>& material) {
  material.validate(mesh.num_elements());
  return detail::assemble_impl<Dim>(mesh, material.lambda, material.mu, nullptr, nullptr);
}

/// Stiffness matrix on the free dofs (Dirichlet rows and columns eliminated).
template <int Dim>
StiffnessSystem assemble(const Mesh<Dim>& mesh, const MaterialField<Dim>& material) {
  material.validate(mesh.num_elements());
  if (!mesh.has_dirichlet())
    throw ConfigError("assemble: Dirichlet boundary is empty; the elasticity system is singular");
  StiffnessSystem sys;
  sys.dofs = make_dof_map(mesh);
  sys.matrix = detail::assemble_impl<Dim>(mesh, material.lambda, material.mu, &sys.dofs, nullptr);
  return sys;
}

/// Free-dof matrix of the weighted form restricted to `support` elements, each
/// scaled by its fraction; coefficients may be of any sign.
template <int Dim>
SparseMatrix assemble_weighted(const Mesh<Dim>& mesh, const DofMap& dofs,
                               std::span<const double> lambda_weight, std::span<const double> mu_weight,
                               const std::vector<std::pair<int, double>>& support) {
  return detail::assemble_impl<Dim>(mesh, lambda_weight, mu_weight, &dofs, &support);
}

namespace detail {

// ∫_{facet ∩ region} φ_a ds for the Dim nodes of boundary facet f.
template <int Dim>
std::array<double, Dim> clipped_facet_moments(const Mesh<Dim>& mesh, std::size_t f,
                                              const Box<Dim>& region) {
  const auto& b = mesh.boundary[f];
  const auto axes = PatchLayout<Dim>::in_plane_axes(b.face);
  std::array<double, Dim> out{};
  if constexpr (Dim == 2) {
    const int a = axes[0];
    const double x0 = mesh.vertices[b.nodes[0]][a], x1 = mesh.vertices[b.nodes[1]][a];
    const double lo = std::max(std::min(x0, x1), region.lo[a]);
    const double hi = std::min(std::max(x0, x1), region.hi[a]);
    if (hi <= lo) return out;
    const double mid = 0.5 * (lo + hi);
    const double t = (mid - x0) / (x1 - x0);  // barycentric weight of node 1
    out[0] = (hi - lo) * (1.0 - t);
    out[1] = (hi - lo) * t;
    return out;
  } else {
    using P2 = Eigen::Vector2d;
    std::array<P2, 3> tri;
    for (int k = 0; k < 3; ++k)
      tri[k] = P2(mesh.vertices[b.nodes[k]][axes[0]], mesh.vertices[b.nodes[k]][axes[1]]);
    const P2 rlo(region.lo[axes[0]], region.lo[axes[1]]);
    const P2 rhi(region.hi[axes[0]], region.hi[axes[1]]);
    P2 tlo = tri[0].cwiseMin(tri[1]).cwiseMin(tri[2]);
    P2 thi = tri[0].cwiseMax(tri[1]).cwiseMax(tri[2]);
    if ((thi.array() <= rlo.array()).any() || (tlo.array() >= rhi.array()).any()) return out;
    const double area = mesh.facet_measure(f);
    if ((tlo.array() >= rlo.array()).all() && (thi.array() <= rhi.array()).all()) {
      out.fill(area / 3.0);
      return out;
    }
    // Sutherland-Hodgman against the four half-planes of the rectangle.
    std::vector<P2> poly(tri.begin(), tri.end());
    for (int axis = 0; axis < 2; ++axis)
      for (int side = 0; side < 2; ++side) {
        const double bound = side == 0 ? rlo[axis] : rhi[axis];
        auto inside = [&](const P2& p) { return side == 0 ? p[axis] >= bound : p[axis] <= bound; };
        std::vector<P2> next;
        for (std::size_t k = 0; k < poly.size(); ++k) {
          const P2& cur = poly[k];
          const P2& prev = poly[(k + poly.size() - 1) % poly.size()];
          const bool ci = inside(cur), pi = inside(prev);
          if (ci != pi) {
            const double t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
            P2 x = prev + t * (cur - prev);
            x[axis] = bound;
            next.push_back(x);
          }
          if (ci) next.push_back(cur);
        }
        poly = std::move(next);
        if (poly.size() < 3) return out;
      }
    Eigen::Matrix2d T;
    T.col(0) = tri[1] - tri[0];
    T.col(1) = tri[2] - tri[0];
    const Eigen::Matrix2d Tinv = T.inverse();
    const double tri_area2 = std::abs(T.determinant());
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      Eigen::Matrix2d S;
      S.col(0) = poly[k] - poly[0];
      S.col(1) = poly[k + 1] - poly[0];
      // In-plane area equals surface area on an axis-aligned face.
      const double sub = 0.5 * std::abs(S.determinant()) * (2.0 * area / tri_area2);
      const P2 c = (poly[0] + poly[k] + poly[k + 1]) / 3.0;
      const P2 bc = Tinv * (c - tri[0]);
      out[0] += sub * (1.0 - bc[0] - bc[1]);
      out[1] += sub * bc[0];
      out[2] += sub * bc[1];
    }
    return out;
  }
}

}  // namespace detail

/// Full-length (vertex * Dim) right-hand side of ∫_{patch} g · v ds. The patch
/// square is integrated exactly against every boundary facet of its face, so
/// the load is the same geometric square on any mesh resolution.
template <int Dim>
Eigen::VectorXd load_vector(const Mesh<Dim>& mesh, const PatchLayout<Dim>& layout,
                            const BoundaryLoad<Dim>& load) {
  const auto patch = layout.patch(load.patch_id);  // throws on unknown ids
  if (!(mesh.box == layout.domain))
    throw InvalidArgument("load_vector: layout domain differs from mesh box");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.num_vertices() * Dim);
  if (load.traction.isZero(0.0)) return f;
  for (std::size_t k = 0; k < mesh.boundary.size(); ++k) {
    const auto& b = mesh.boundary[k];
    if (!(b.face == patch.face) || b.tag == kDirichletTag) continue;
    const auto w = detail::clipped_facet_moments(mesh, k, patch.region);
    for (int a = 0; a < Dim; ++a)
      f.template segment<Dim>(b.nodes[a] * Dim) += w[a] * load.traction;
  }
  return f;
}

/// Columns are the load vectors of the normal-traction system g_1..g_m.
template <int Dim>
Eigen::MatrixXd load_matrix(const Mesh<Dim>& mesh, const PatchLayout<Dim>& layout) {
  const int m = layout.load_count();
  Eigen::MatrixXd F(mesh.num_vertices() * Dim, m);
  for (int i = 1; i <= m; ++i) F.col(i - 1) = load_vector(mesh, layout, BoundaryLoad<Dim>::normal(layout, i));
  return F;
}

enum class SolverKind { Direct, ConjugateGradient };

struct SolverOptions {
  SolverKind kind = SolverKind::Direct;
  double rtol = 1e-10;
  int max_iterations = 20000;
};

/// Factorization (or CG setup) of one StiffnessSystem. Immutable after
/// construction; concurrent solve() calls are safe.
class LinearSolver {
 public:
  LinearSolver(const StiffnessSystem& system, SolverOptions options = {})
      : matrix_(system.matrix), dofs_(system.dofs), options_(options) {
    if (options_.kind == SolverKind::Direct) {
      ldlt_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower>>();
      ldlt_->compute(matrix_);
      if (ldlt_->info() != Eigen::Success)
        throw ConfigError("stiffness factorization failed (is the Dirichlet boundary empty?)");
      const auto d = ldlt_->vectorD();
      if ((d.array() <= 0.0).any())
        throw ConfigError("stiffness matrix is not positive definite");
    }
  }

  const DofMap& dofs() const { return dofs_; }
  const SparseMatrix& matrix() const { return matrix_; }

  /// Solves for free-dof right-hand sides (one per column).
  Eigen::MatrixXd solve_free(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd x(rhs.rows(), rhs.cols());
    if (options_.kind == SolverKind::Direct) {
      x = ldlt_->solve(rhs);
      // One step of iterative refinement where the residual misses rtol.
      for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
        const double bn = rhs.col(c).norm();
        Eigen::VectorXd r = rhs.col(c) - matrix_ * x.col(c);
        if (r.norm() > options_.rtol * bn) {
          x.col(c) += ldlt_->solve(r);
          r = rhs.col(c) - matrix_ * x.col(c);
        }
        if (r.norm() > options_.rtol * bn && bn > 0.0)
          throw SolverError("direct solve missed the residual tolerance", r.norm() / bn);
      }
    } else {
      Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
      cg.setTolerance(options_.rtol);
      cg.setMaxIterations(options_.max_iterations);
      cg.compute(matrix_);
      for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
        x.col(c) = cg.solve(rhs.col(c));
        const double bn = rhs.col(c).norm();
        const double res = bn > 0.0 ? (rhs.col(c) - matrix_ * x.col(c)).norm() / bn : 0.0;
        if (cg.info() != Eigen::Success || res > options_.rtol)
          throw SolverError("conjugate gradient did not converge within " +
                                std::to_string(options_.max_iterations) + " iterations",
                            res);
      }
    }
    return x;
  }

  /// Full-length right-hand sides in, full-length displacements out.
  Eigen::MatrixXd solve_full(const Eigen::MatrixXd& rhs_full) const {
    return dofs_.expand(solve_free(dofs_.restrict(rhs_full)));
  }

  template <int Dim>
  DisplacementField<Dim> solve(const Eigen::VectorXd& rhs_full) const {
    return {solve_full(rhs_full).col(0)};
  }

 private:
  SparseMatrix matrix_;
  DofMap dofs_;
  SolverOptions options_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower>> ldlt_;
};

template <int Dim>
DisplacementField<Dim> solve(const StiffnessSystem& system, const Eigen::VectorXd& rhs_full,
                             SolverOptions options = {}) {
  return LinearSolver(system, options).solve<Dim>(rhs_full);
}

/// Displacement gradient (∇u)_{ij} = ∂u_i/∂x_j on element e.
template <int Dim>
Eigen::Matrix<double, Dim, Dim> element_displacement_gradient(const Mesh<Dim>& mesh, std::size_t e,
                                                              const Eigen::Ref<const Eigen::VectorXd>& u) {
  Eigen::Matrix<double, Dim, Dim> G = Eigen::Matrix<double, Dim, Dim>::Zero();
  const auto& el = mesh.elements[e];
  for (int a = 0; a <= Dim; ++a)
    G += u.template segment<Dim>(el[a] * Dim) * mesh.gradients[e].row(a);
  return G;
}

/// ∫ 2 b ε(u):ε(v) + a div u div v dx with per-element weights (a, b), exact
/// elementwise since P1 gradients are constant.
template <int Dim>
double strain_energy_product(const Mesh<Dim>& mesh, std::span<const double> lambda_weight,
                             std::span<const double> mu_weight, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& v) {
  const std::size_t nd = mesh.num_vertices() * Dim;
  if (lambda_weight.size() != mesh.num_elements() || mu_weight.size() != mesh.num_elements() ||
      static_cast<std::size_t>(u.size()) != nd || static_cast<std::size_t>(v.size()) != nd)
    throw InvalidArgument("strain_energy_product: fields do not live on this mesh");
  double total = 0.0;
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    if (lambda_weight[e] == 0.0 && mu_weight[e] == 0.0) continue;
    const auto Gu = element_displacement_gradient(mesh, e, u);
    const auto Gv = element_displacement_gradient(mesh, e, v);
    const Eigen::Matrix<double, Dim, Dim> Eu = 0.5 * (Gu + Gu.transpose());
    const Eigen::Matrix<double, Dim, Dim> Ev = 0.5 * (Gv + Gv.transpose());
    // Symmetric in (u, v) term by term, so swapping arguments is exact.
    total += mesh.volumes[e] *
             (2.0 * mu_weight[e] * Eu.cwiseProduct(Ev).sum() + lambda_weight[e] * Gu.trace() * Gv.trace());
  }
  return total;
}

template <int Dim>
double strain_energy_product(const Mesh<Dim>& mesh, const MaterialField<Dim>& weights,
                             const DisplacementField<Dim>& u, const DisplacementField<Dim>& v) {
  return strain_energy_product<Dim>(mesh, weights.lambda, weights.mu, u.values, v.values);
}

}  // namespace elmono
