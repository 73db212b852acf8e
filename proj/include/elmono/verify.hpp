#pragma once

// Property checks of the NtD, derivative and test layers. Mesh sizes are
// parameters so the same checks run coarse (CLI `verify`) or at the
// acceptance sizes.

#include "elmono/frechet.hpp"
#include "elmono/monotest.hpp"

#include <chrono>
#include <functional>
#include <random>
#include <sstream>

namespace elmono::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{name};
  try {
    std::tie(r.passed, r.detail) = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(4) << x;
  return os.str();
}

struct Materials {
  double lambda0 = 6.6211e5, mu0 = 6.6892e3, lambda1 = 2.3177e6, mu1 = 2.3411e4;
};

/// ‖Λ − Λᵀ‖_max / ‖Λ‖_max before symmetrization.
inline CheckResult self_adjointness(int resolution, int patches_per_axis, double tol = 1e-9, Materials mat = {}) {
  return timed("self-adjointness", [=] {
    const auto mesh = build_box_mesh(Box<3>::unit_centered(), resolution);
    const PatchLayout<3> layout{Box<3>::unit_centered(), patches_per_axis};
    const Box<3> d{Point<3>(-0.25, -0.25, -0.25), Point<3>(0.15, 0.2, 0.25)};
    const auto material = material_with_inclusions(mesh, mat.lambda0, mat.mu0, {{d, {mat.lambda1, mat.mu1}}});
    const auto raw = ntd_solve(mesh, material, layout).raw;
    const double ratio = (raw - raw.transpose()).cwiseAbs().maxCoeff() / raw.cwiseAbs().maxCoeff();
    return std::pair{ratio <= tol, "m = " + std::to_string(raw.rows()) + ", asymmetry ratio " + fmt(ratio) +
                                       " (limit " + fmt(tol) + ")"};
  });
}

/// Random cellwise-constant pairs (λ_a, μ_a) ≤ (λ_b, μ_b):
/// λ_min(Λ_a − Λ_b) ≥ −tol ‖Λ_a‖₂.
inline CheckResult loewner_monotonicity(int resolution, int patches_per_axis, int pairs, std::uint64_t seed,
                                        double tol = 1e-9, Materials mat = {}) {
  return timed("loewner monotonicity", [=] {
    const auto mesh = build_box_mesh(Box<3>::unit_centered(), resolution);
    const PatchLayout<3> layout{Box<3>::unit_centered(), patches_per_axis};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t cells = mesh.num_elements() / Mesh<3>::kElementsPerCell;
    double worst = std::numeric_limits<double>::infinity();
    for (int p = 0; p < pairs; ++p) {
      MaterialField<3> a, b;
      a.lambda.resize(mesh.num_elements());
      a.mu.resize(mesh.num_elements());
      b = a;
      for (std::size_t c = 0; c < cells; ++c) {
        const double la = mat.lambda0 * (0.5 + 3.0 * unit(rng)), ma = mat.mu0 * (0.5 + 3.0 * unit(rng));
        // Some cells keep equal values so the pair is not strictly ordered.
        const double lb = unit(rng) < 0.3 ? la : la * (1.0 + 2.0 * unit(rng));
        const double mb = unit(rng) < 0.3 ? ma : ma * (1.0 + 2.0 * unit(rng));
        for (int k = 0; k < Mesh<3>::kElementsPerCell; ++k) {
          const std::size_t e = c * Mesh<3>::kElementsPerCell + k;
          a.lambda[e] = la, a.mu[e] = ma, b.lambda[e] = lb, b.mu[e] = mb;
        }
      }
      const auto A = ntd_matrix(mesh, a, layout).entries;
      const auto B = ntd_matrix(mesh, b, layout).entries;
      worst = std::min(worst, min_eigenvalue(A - B) / spectral_norm(A));
    }
    return std::pair{worst >= -tol, std::to_string(pairs) + " pairs, worst scaled min eigenvalue " + fmt(worst) +
                                        " (floor " + fmt(-tol) + ")"};
  });
}

/// Per-load energy bounds for one inclusion: the energy sandwich and the
/// ratio-weighted lower bound, with relative slack `tol`.
inline CheckResult energy_bounds(int resolution, int patches_per_axis, double tol = 1e-8, Materials mat = {}) {
  return timed("energy sandwich and lower bound", [=] {
    const auto mesh = build_box_mesh(Box<3>::unit_centered(), resolution);
    const PatchLayout<3> layout{Box<3>::unit_centered(), patches_per_axis};
    const double h = 1.0 / resolution;
    const Box<3> d{Point<3>::Constant(-0.5 + h * (resolution / 2 - 1)),
                   Point<3>::Constant(-0.5 + h * (resolution / 2 + 1))};
    const auto m0 = material_background(mesh, mat.lambda0, mat.mu0);
    const auto m1 = material_with_inclusions(mesh, mat.lambda0, mat.mu0, {{d, {mat.lambda1, mat.mu1}}});
    const auto s0 = ntd_solve(mesh, m0, layout);
    const auto s1 = ntd_solve(mesh, m1, layout);
    const std::size_t ne = mesh.num_elements();
    std::vector<double> wl(ne), wm(ne), rl(ne), rm(ne);
    for (std::size_t e = 0; e < ne; ++e) {
      wl[e] = m0.lambda[e] - m1.lambda[e];
      wm[e] = m0.mu[e] - m1.mu[e];
      rl[e] = m1.lambda[e] / m0.lambda[e] * wl[e];
      rm[e] = m1.mu[e] / m0.mu[e] * wm[e];
    }
    double worst = 0.0;  // largest relative violation
    for (Eigen::Index i = 0; i < s0.raw.rows(); ++i) {
      const Eigen::VectorXd u0 = s0.displacements_full.col(i), u1 = s1.displacements_full.col(i);
      const double diff = s1.raw(i, i) - s0.raw(i, i);
      const double lower = strain_energy_product<3>(mesh, wl, wm, u0, u0);
      const double upper = strain_energy_product<3>(mesh, wl, wm, u1, u1);
      const double ratio_bound = strain_energy_product<3>(mesh, rl, rm, u1, u1);
      const double scale = std::max({std::abs(lower), std::abs(upper), std::abs(diff)});
      worst = std::max({worst, (lower - diff) / scale, (diff - upper) / scale, (ratio_bound - diff) / scale});
    }
    return std::pair{worst <= tol, "m = " + std::to_string(s0.raw.rows()) + ", largest relative violation " +
                                       fmt(worst) + " (slack " + fmt(tol) + ")"};
  });
}

struct FrechetFdStats {
  std::vector<double> errors;
  std::vector<double> ratios;
  double nsd_ratio = 0.0;  // λ_max(Λ') / ‖Λ'‖₂
};

/// Finite differences of the full NtD map in the direction (α χ_B, β χ_B)
/// against the derivative matrix.
inline FrechetFdStats frechet_fd_stats(int resolution, int patches_per_axis, const std::vector<double>& steps,
                                       Materials mat = {}) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), resolution);
  const PatchLayout<3> layout{Box<3>::unit_centered(), patches_per_axis};
  const double h = 1.0 / resolution;
  const Box<3> cube{Point<3>(-0.5 + 2 * h, -0.5 + 2 * h, -0.5 + 2 * h), Point<3>(-0.5 + 4 * h, -0.5 + 4 * h, -0.5 + 4 * h)};
  const double alpha = mat.lambda1 - mat.lambda0, beta = mat.mu1 - mat.mu0;
  const auto bank = build_solution_bank(mesh, mat.lambda0, mat.mu0, layout);
  const Eigen::MatrixXd d = frechet_matrix(bank, cube, alpha, beta).entries;
  FrechetFdStats st;
  for (double t : steps) {
    const auto material = test_inclusion_material(mesh, mat.lambda0, mat.mu0, cube, t * alpha, t * beta, Direction::Raise);
    // coupled_difference gives Λ0 − Λ_t.
    const Eigen::MatrixXd fd = -symmetrized(coupled_difference(mesh, bank.solutions, material)) / t;
    st.errors.push_back(spectral_norm(fd - d));
  }
  for (std::size_t i = 1; i < st.errors.size(); ++i) st.ratios.push_back(st.errors[i] / st.errors[i - 1]);
  st.nsd_ratio = max_eigenvalue(d) / spectral_norm(d);
  return st;
}

inline CheckResult frechet_derivative(int resolution, int patches_per_axis, double lo = 0.35, double hi = 0.65,
                                      double nsd_tol = 1e-12) {
  return timed("frechet derivative", [=] {
    const auto st = frechet_fd_stats(resolution, patches_per_axis, {1e-1, 5e-2, 2.5e-2});
    bool ok = st.nsd_ratio <= nsd_tol;
    std::string detail = "error ratios";
    for (double r : st.ratios) {
      ok = ok && r >= lo && r <= hi;
      detail += " " + fmt(r);
    }
    detail += " (want [" + fmt(lo) + ", " + fmt(hi) + "]), lambda_max/norm " + fmt(st.nsd_ratio);
    return std::pair{ok, detail};
  });
}

/// D equal to one aligned test cube, same mesh for data and test:
/// exactly that cube is flagged.
inline CheckResult perfect_fit(int resolution, int cubes_per_axis, int patches_per_axis, int target = -1,
                               unsigned workers = 1, Materials mat = {}) {
  return timed("perfect fit", [=] {
    const auto mesh = build_box_mesh(Box<3>::unit_centered(), resolution);
    const PatchLayout<3> layout{Box<3>::unit_centered(), patches_per_axis};
    const auto grid = build_test_cubes(Box<3>::unit_centered(), cubes_per_axis);
    const int k = target >= 0 ? target : static_cast<int>(grid.size() / 2);
    const auto meas = difference_measurement(mesh, mat.lambda0, mat.mu0, {{grid.cubes[k], {mat.lambda1, mat.mu1}}},
                                             layout);
    const auto bg = solve_background(mesh, layout, mat.lambda0, mat.mu0);
    std::vector<OperatorMatrix> ops(grid.size());
    parallel_for(grid.size(), workers, [&](std::size_t i) {
      ops[i] = test_operator_standard(mesh, bg, grid.cubes[i], mat.lambda1 - mat.lambda0, mat.mu1 - mat.mu0,
                                      Direction::Raise);
    });
    const double delta = 1e-12 * spectral_norm(meas.entries);
    const auto r = standard_test(meas, ops, delta, Direction::Raise, workers);
    bool ok = r.cubes[k].inside && r.inside_count() == 1;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (const auto& c : r.cubes)
      if (c.index != k) runner_up = std::max(runner_up, c.min_eigenvalue);
    return std::pair{ok, std::to_string(r.inside_count()) + " of " + std::to_string(grid.size()) +
                             " flagged, target value " + fmt(r.cubes[k].min_eigenvalue) + ", best other " +
                             fmt(runner_up)};
  });
}

/// Coarse run of all checks for the CLI.
inline std::vector<CheckResult> coarse_suite(unsigned workers = 1) {
  return {self_adjointness(4, 2), loewner_monotonicity(4, 2, 4, 7), energy_bounds(4, 2), frechet_derivative(4, 2),
          perfect_fit(4, 2, 2, 0, workers)};
}

}  // namespace elmono::verify
