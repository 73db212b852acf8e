#pragma once

// Structured simplicial meshes of axis-aligned boxes, boundary patch layouts
// and test-cube grids.

#include "elmono/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace elmono {

/// Boundary face selector: index = 2 * axis + side, side 0 is the min face.
struct Face {
  int axis = 0;
  int side = 0;

  int index() const { return 2 * axis + side; }
  static Face from_index(int i) { return {i / 2, i % 2}; }
  bool operator==(const Face&) const = default;
};

template <int Dim>
constexpr Face default_dirichlet_face() {
  return {Dim - 1, 0};
}

template <int Dim>
Point<Dim> outward_normal(Face f) {
  Point<Dim> n = Point<Dim>::Zero();
  n[f.axis] = f.side == 0 ? -1.0 : 1.0;
  return n;
}

inline constexpr int kDirichletTag = -1;
inline constexpr int kUntagged = 0;

template <int Dim>
struct Mesh {
  static_assert(Dim == 2 || Dim == 3, "only 2-D and 3-D meshes are supported");
  static constexpr int kNodesPerElement = Dim + 1;
  static constexpr int kElementsPerCell = Dim == 2 ? 2 : 6;

  using Element = std::array<int, Dim + 1>;
  using Facet = std::array<int, Dim>;
  // Row a holds the (constant) gradient of the barycentric function of node a.
  using Gradients = Eigen::Matrix<double, Dim + 1, Dim>;

  struct BoundaryFacet {
    Facet nodes;
    int element = -1;
    Face face;
    int tag = kUntagged;  // kDirichletTag, kUntagged or a patch id >= 1
  };

  Box<Dim> box;
  int resolution = 0;
  std::vector<Point<Dim>> vertices;
  std::vector<Element> elements;  // cell-major, kElementsPerCell per cell
  std::vector<BoundaryFacet> boundary;

  std::vector<double> volumes;
  std::vector<Gradients> gradients;
  std::vector<char> dirichlet_vertex;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_elements() const { return elements.size(); }

  Point<Dim> cell_size() const { return box.extent() / resolution; }

  Point<Dim> element_centroid(std::size_t e) const {
    Point<Dim> c = Point<Dim>::Zero();
    for (int v : elements[e]) c += vertices[v];
    return c / kNodesPerElement;
  }

  Point<Dim> facet_centroid(std::size_t f) const {
    Point<Dim> c = Point<Dim>::Zero();
    for (int v : boundary[f].nodes) c += vertices[v];
    return c / Dim;
  }

  double facet_measure(std::size_t f) const {
    const auto& n = boundary[f].nodes;
    if constexpr (Dim == 2) {
      return (vertices[n[1]] - vertices[n[0]]).norm();
    } else {
      Eigen::Vector3d a = vertices[n[1]] - vertices[n[0]];
      Eigen::Vector3d b = vertices[n[2]] - vertices[n[0]];
      return 0.5 * a.cross(b).norm();
    }
  }

  bool has_dirichlet() const {
    return std::any_of(boundary.begin(), boundary.end(),
                       [](const BoundaryFacet& b) { return b.tag == kDirichletTag; });
  }

  // Rebuilds the Dirichlet vertex mask from the facet tags.
  void refresh_dirichlet_mask() {
    dirichlet_vertex.assign(vertices.size(), 0);
    for (const auto& b : boundary)
      if (b.tag == kDirichletTag)
        for (int v : b.nodes) dirichlet_vertex[v] = 1;
  }
};

namespace detail {

template <int Dim>
double signed_volume(const std::array<Point<Dim>, Dim + 1>& x) {
  Eigen::Matrix<double, Dim, Dim> J;
  for (int a = 0; a < Dim; ++a) J.col(a) = x[a + 1] - x[0];
  double fact = Dim == 2 ? 2.0 : 6.0;
  return J.determinant() / fact;
}

inline int permutation_sign(const std::vector<int>& p) {
  int s = 1;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (p[i] > p[j]) s = -s;
  return s;
}

template <int Dim>
void precompute_geometry(Mesh<Dim>& m) {
  m.volumes.resize(m.elements.size());
  m.gradients.resize(m.elements.size());
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    const auto& el = m.elements[e];
    std::array<Point<Dim>, Dim + 1> x;
    for (int a = 0; a <= Dim; ++a) x[a] = m.vertices[el[a]];
    m.volumes[e] = signed_volume<Dim>(x);
    Eigen::Matrix<double, Dim, Dim> J;
    for (int a = 0; a < Dim; ++a) J.col(a) = x[a + 1] - x[0];
    Eigen::Matrix<double, Dim, Dim> Jinv = J.inverse();
    typename Mesh<Dim>::Gradients G;
    G.template bottomRows<Dim>() = Jinv;
    G.row(0) = -Jinv.colwise().sum();
    m.gradients[e] = G;
  }
}

}  // namespace detail

/// Structured mesh of `box` with `resolution` cells per axis. Every cell is
/// split into Dim! simplices along its main diagonal (Kuhn split), which is
/// conforming across cells. The face `dirichlet` is tagged as Dirichlet; all
/// other boundary facets are left untagged until tag_boundary() runs.
template <int Dim>
Mesh<Dim> build_box_mesh(const Box<Dim>& box, int resolution,
                         Face dirichlet = default_dirichlet_face<Dim>()) {
  if (resolution < 1) throw InvalidArgument("build_box_mesh: resolution must be >= 1");
  if (!box.valid()) throw InvalidArgument("build_box_mesh: box must have positive extent per axis");
  if (dirichlet.axis < 0 || dirichlet.axis >= Dim || dirichlet.side < 0 || dirichlet.side > 1)
    throw InvalidArgument("build_box_mesh: invalid Dirichlet face");

  Mesh<Dim> m;
  m.box = box;
  m.resolution = resolution;
  const int n = resolution;
  const int nv = n + 1;
  const Point<Dim> h = box.extent() / n;

  auto vid = [nv](const std::array<int, Dim>& ijk) {
    int id = 0;
    for (int a = Dim - 1; a >= 0; --a) id = id * nv + ijk[a];
    return id;
  };

  int total_vertices = 1;
  for (int a = 0; a < Dim; ++a) total_vertices *= nv;
  m.vertices.resize(total_vertices);
  for (int id = 0; id < total_vertices; ++id) {
    int r = id;
    Point<Dim> p;
    for (int a = 0; a < Dim; ++a) {
      int i = r % nv;
      r /= nv;
      // Snap the last layer to hi exactly so facet coordinates match the box.
      p[a] = i == n ? box.hi[a] : box.lo[a] + i * h[a];
    }
    m.vertices[id] = p;
  }

  std::vector<std::vector<int>> perms;
  {
    std::vector<int> p(Dim);
    std::iota(p.begin(), p.end(), 0);
    do perms.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
  }

  int total_cells = 1;
  for (int a = 0; a < Dim; ++a) total_cells *= n;
  m.elements.reserve(static_cast<std::size_t>(total_cells) * perms.size());
  for (int c = 0; c < total_cells; ++c) {
    std::array<int, Dim> base;
    int r = c;
    for (int a = 0; a < Dim; ++a) {
      base[a] = r % n;
      r /= n;
    }
    for (const auto& p : perms) {
      typename Mesh<Dim>::Element el;
      std::array<int, Dim> cur = base;
      el[0] = vid(cur);
      for (int k = 0; k < Dim; ++k) {
        cur[p[k]] += 1;
        el[k + 1] = vid(cur);
      }
      // The Kuhn simplex for permutation p has orientation sign(p).
      if (detail::permutation_sign(p) < 0) std::swap(el[0], el[1]);
      m.elements.push_back(el);
    }
  }

  detail::precompute_geometry(m);

  // Boundary facets are the facets owned by exactly one element.
  std::map<std::array<int, Dim>, std::pair<int, int>> owners;  // sorted nodes -> (element, count)
  std::vector<typename Mesh<Dim>::Facet> facet_nodes;
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    for (int skip = 0; skip <= Dim; ++skip) {
      std::array<int, Dim> f;
      int k = 0;
      for (int a = 0; a <= Dim; ++a)
        if (a != skip) f[k++] = m.elements[e][a];
      std::sort(f.begin(), f.end());
      auto [it, inserted] = owners.try_emplace(f, static_cast<int>(e), 0);
      it->second.second += 1;
    }
  }
  for (const auto& [nodes, owner] : owners) {
    if (owner.second != 1) continue;
    typename Mesh<Dim>::BoundaryFacet b;
    b.nodes = nodes;
    b.element = owner.first;
    // All nodes of a boundary facet share one extremal coordinate.
    bool found = false;
    for (int a = 0; a < Dim && !found; ++a) {
      for (int side = 0; side < 2 && !found; ++side) {
        double target = side == 0 ? box.lo[a] : box.hi[a];
        bool all = std::all_of(nodes.begin(), nodes.end(),
                               [&](int v) { return m.vertices[v][a] == target; });
        if (all) {
          b.face = {a, side};
          found = true;
        }
      }
    }
    if (!found) throw std::logic_error("build_box_mesh: boundary facet off the box surface");
    b.tag = b.face == dirichlet ? kDirichletTag : kUntagged;
    m.boundary.push_back(b);
  }
  m.refresh_dirichlet_mask();
  return m;
}

/// Division of the Neumann faces into p^(Dim-1) equal patches each. Patch ids
/// run from 1 to m, face by face in face-index order, row-major over the
/// in-plane axes (lowest axis fastest).
template <int Dim>
struct PatchLayout {
  Box<Dim> domain = Box<Dim>::unit_centered();
  int patches_per_face_axis = 5;
  Face dirichlet_face = default_dirichlet_face<Dim>();

  struct Patch {
    int id = 0;
    Face face;
    Box<Dim> region;  // degenerate along face.axis
  };

  static constexpr int kFaceCount = 2 * Dim;

  int patches_per_face() const {
    int c = 1;
    for (int a = 0; a < Dim - 1; ++a) c *= patches_per_face_axis;
    return c;
  }

  std::vector<Face> neumann_faces() const {
    std::vector<Face> out;
    for (int i = 0; i < kFaceCount; ++i)
      if (Face::from_index(i) != dirichlet_face) out.push_back(Face::from_index(i));
    return out;
  }

  int load_count() const { return patches_per_face() * (kFaceCount - 1); }

  void validate() const {
    if (patches_per_face_axis < 1) throw InvalidArgument("patch layout: patches_per_face_axis must be >= 1");
    if (!domain.valid()) throw InvalidArgument("patch layout: domain box must have positive extent");
    if (dirichlet_face.axis < 0 || dirichlet_face.axis >= Dim || dirichlet_face.side < 0 ||
        dirichlet_face.side > 1)
      throw InvalidArgument("patch layout: invalid Dirichlet face");
  }

  static std::array<int, Dim - 1> in_plane_axes(Face f) {
    std::array<int, Dim - 1> ax{};
    int k = 0;
    for (int a = 0; a < Dim; ++a)
      if (a != f.axis) ax[k++] = a;
    return ax;
  }

  Patch patch(int id) const {
    if (id < 1 || id > load_count())
      throw InvalidArgument("patch id " + std::to_string(id) + " outside [1, " +
                            std::to_string(load_count()) + "]");
    const int per_face = patches_per_face();
    const auto faces = neumann_faces();
    Face f = faces[(id - 1) / per_face];
    int local = (id - 1) % per_face;
    Patch p;
    p.id = id;
    p.face = f;
    const double coord = f.side == 0 ? domain.lo[f.axis] : domain.hi[f.axis];
    p.region.lo[f.axis] = p.region.hi[f.axis] = coord;
    const auto axes = in_plane_axes(f);
    for (int k = 0; k < Dim - 1; ++k) {
      int idx = local % patches_per_face_axis;
      local /= patches_per_face_axis;
      const int a = axes[k];
      const double w = (domain.hi[a] - domain.lo[a]) / patches_per_face_axis;
      p.region.lo[a] = domain.lo[a] + idx * w;
      p.region.hi[a] = idx + 1 == patches_per_face_axis ? domain.hi[a] : domain.lo[a] + (idx + 1) * w;
    }
    return p;
  }

  // Patch containing point x on Neumann face f; 0 for the Dirichlet face.
  int patch_at(Face f, const Point<Dim>& x) const {
    if (f == dirichlet_face) return 0;
    const auto faces = neumann_faces();
    int face_slot = static_cast<int>(std::find(faces.begin(), faces.end(), f) - faces.begin());
    const auto axes = in_plane_axes(f);
    int local = 0;
    for (int k = Dim - 2; k >= 0; --k) {
      const int a = axes[k];
      double t = (x[a] - domain.lo[a]) / (domain.hi[a] - domain.lo[a]) * patches_per_face_axis;
      int idx = std::clamp(static_cast<int>(std::floor(t)), 0, patches_per_face_axis - 1);
      local = local * patches_per_face_axis + idx;
    }
    return face_slot * patches_per_face() + local + 1;
  }

  bool operator==(const PatchLayout& o) const {
    return domain == o.domain && patches_per_face_axis == o.patches_per_face_axis &&
           dirichlet_face == o.dirichlet_face;
  }
};

/// Tags the Dirichlet face and assigns every other boundary facet the patch
/// whose square contains its centroid. Requires resolution % p == 0 so that
/// patches are unions of whole facets.
template <int Dim>
Mesh<Dim> tag_boundary(const Mesh<Dim>& mesh, const PatchLayout<Dim>& layout) {
  layout.validate();
  if (!(mesh.box == layout.domain))
    throw InvalidArgument("tag_boundary: layout domain differs from mesh box");
  if (mesh.resolution % layout.patches_per_face_axis != 0)
    throw InvalidArgument("tag_boundary: resolution " + std::to_string(mesh.resolution) +
                          " not divisible by patches_per_face_axis " +
                          std::to_string(layout.patches_per_face_axis));
  Mesh<Dim> out = mesh;
  for (std::size_t f = 0; f < out.boundary.size(); ++f) {
    auto& b = out.boundary[f];
    b.tag = b.face == layout.dirichlet_face ? kDirichletTag
                                            : layout.patch_at(b.face, out.facet_centroid(f));
  }
  out.refresh_dirichlet_mask();
  return out;
}

/// Regular grid of equally sized test cubes.
template <int Dim>
struct TestCubeGrid {
  int cubes_per_axis = 0;
  Point<Dim> offset = Point<Dim>::Zero();
  Point<Dim> cube_size = Point<Dim>::Zero();
  std::vector<Box<Dim>> cubes;  // lowest axis fastest

  std::size_t size() const { return cubes.size(); }
};

/// n_axis^Dim cubes starting at domain.lo + offset. The cube size defaults to
/// domain extent / n_axis; pass it explicitly for shifted grids whose cubes
/// keep the size of an unshifted reference grid.
template <int Dim>
TestCubeGrid<Dim> build_test_cubes(const Box<Dim>& domain, int n_axis,
                                   const Point<Dim>& offset = Point<Dim>::Zero(),
                                   std::optional<Point<Dim>> cube_size = std::nullopt) {
  if (n_axis < 1) throw InvalidArgument("build_test_cubes: n_axis must be >= 1");
  if (!domain.valid()) throw InvalidArgument("build_test_cubes: invalid domain box");
  TestCubeGrid<Dim> g;
  g.cubes_per_axis = n_axis;
  g.offset = offset;
  g.cube_size = cube_size.value_or(domain.extent() / n_axis);
  if ((g.cube_size.array() <= 0.0).any())
    throw InvalidArgument("build_test_cubes: cube size must be positive");
  int total = 1;
  for (int a = 0; a < Dim; ++a) total *= n_axis;
  g.cubes.reserve(total);
  const double tol = 1e-12 * domain.extent().maxCoeff();
  for (int k = 0; k < total; ++k) {
    int r = k;
    Box<Dim> b;
    for (int a = 0; a < Dim; ++a) {
      int i = r % n_axis;
      r /= n_axis;
      b.lo[a] = domain.lo[a] + offset[a] + i * g.cube_size[a];
      b.hi[a] = b.lo[a] + g.cube_size[a];
    }
    if (!domain.contains(b, tol))
      throw InvalidArgument("build_test_cubes: cube " + std::to_string(k) + " leaves the domain");
    g.cubes.push_back(b);
  }
  return g;
}

namespace detail {

template <int Dim>
using Simplex = std::array<Point<Dim>, Dim + 1>;

// Regular refinement into 2^Dim children of equal volume (red refinement).
template <int Dim>
std::array<Simplex<Dim>, (1 << Dim)> refine(const Simplex<Dim>& s) {
  auto mid = [&](int a, int b) -> Point<Dim> { return 0.5 * (s[a] + s[b]); };
  if constexpr (Dim == 2) {
    Point<2> m01 = mid(0, 1), m02 = mid(0, 2), m12 = mid(1, 2);
    return {{{s[0], m01, m02}, {m01, s[1], m12}, {m02, m12, s[2]}, {m01, m12, m02}}};
  } else {
    Point<3> x01 = mid(0, 1), x02 = mid(0, 2), x03 = mid(0, 3), x12 = mid(1, 2),
             x13 = mid(1, 3), x23 = mid(2, 3);
    return {{{s[0], x01, x02, x03},
             {x01, s[1], x12, x13},
             {x02, x12, s[2], x23},
             {x03, x13, x23, s[3]},
             {x01, x02, x03, x13},
             {x01, x02, x12, x13},
             {x02, x03, x13, x23},
             {x02, x12, x13, x23}}};
  }
}

template <int Dim, class Inside>
long count_inside(const Simplex<Dim>& s, int depth, const Inside& inside) {
  if (depth == 0) {
    Point<Dim> c = Point<Dim>::Zero();
    for (const auto& p : s) c += p;
    return inside(Point<Dim>(c / (Dim + 1))) ? 1 : 0;
  }
  long n = 0;
  for (const auto& child : refine<Dim>(s)) n += count_inside<Dim>(child, depth - 1, inside);
  return n;
}

inline bool on_grid(double x, double origin, double h) {
  double t = (x - origin) / h;
  return std::abs(t - std::round(t)) <= 1e-9;
}

}  // namespace detail

/// True when every face of `cube` lies on a mesh grid plane.
template <int Dim>
bool cube_aligned_with(const Mesh<Dim>& mesh, const Box<Dim>& cube) {
  const Point<Dim> h = mesh.cell_size();
  for (int a = 0; a < Dim; ++a)
    if (!detail::on_grid(cube.lo[a], mesh.box.lo[a], h[a]) ||
        !detail::on_grid(cube.hi[a], mesh.box.lo[a], h[a]))
      return false;
  return true;
}

/// Nonzero entries of vol(element ∩ region)/vol(element), where the region is
/// the union of `boxes`. Exact for boxes aligned with the cells; otherwise the
/// element is refined `depth` times and sub-simplex centroids are classified.
template <int Dim>
std::vector<std::pair<int, double>> region_support(const Mesh<Dim>& mesh,
                                                   const std::vector<Box<Dim>>& boxes,
                                                   int depth = 3) {
  if (depth < 0) throw InvalidArgument("region_support: depth must be >= 0");
  const int n = mesh.resolution;
  const Point<Dim> h = mesh.cell_size();
  const bool aligned = std::all_of(boxes.begin(), boxes.end(),
                                   [&](const Box<Dim>& b) { return cube_aligned_with(mesh, b); });
  auto inside_any = [&](const Point<Dim>& p) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const Box<Dim>& b) { return b.contains(p); });
  };

  std::map<int, double> acc;
  long denom = 1;
  for (int k = 0; k < depth; ++k) denom *= (1 << Dim);

  for (const auto& b : boxes) {
    std::array<int, Dim> lo_idx, hi_idx;
    for (int a = 0; a < Dim; ++a) {
      lo_idx[a] = std::clamp(static_cast<int>(std::floor((b.lo[a] - mesh.box.lo[a]) / h[a] + 1e-9)), 0, n - 1);
      hi_idx[a] = std::clamp(static_cast<int>(std::ceil((b.hi[a] - mesh.box.lo[a]) / h[a] - 1e-9)) - 1, 0, n - 1);
    }
    std::array<int, Dim> ijk = lo_idx;
    while (true) {
      int cell = 0;
      for (int a = Dim - 1; a >= 0; --a) cell = cell * n + ijk[a];
      for (int k = 0; k < Mesh<Dim>::kElementsPerCell; ++k) {
        const int e = cell * Mesh<Dim>::kElementsPerCell + k;
        if (acc.count(e)) continue;
        double frac = 0.0;
        if (aligned) {
          frac = inside_any(mesh.element_centroid(e)) ? 1.0 : 0.0;
        } else {
          detail::Simplex<Dim> s;
          Box<Dim> bb{Point<Dim>::Constant(1e300), Point<Dim>::Constant(-1e300)};
          for (int a = 0; a <= Dim; ++a) {
            s[a] = mesh.vertices[mesh.elements[e][a]];
            bb.lo = bb.lo.cwiseMin(s[a]);
            bb.hi = bb.hi.cwiseMax(s[a]);
          }
          bool fully = std::any_of(boxes.begin(), boxes.end(),
                                   [&](const Box<Dim>& bx) { return bx.contains(bb); });
          frac = fully ? 1.0
                       : static_cast<double>(detail::count_inside<Dim>(s, depth, inside_any)) / denom;
        }
        acc.emplace(e, frac);
      }
      int a = 0;
      while (a < Dim && ++ijk[a] > hi_idx[a]) {
        ijk[a] = lo_idx[a];
        ++a;
      }
      if (a == Dim) break;
    }
  }
  std::vector<std::pair<int, double>> out;
  for (const auto& [e, f] : acc)
    if (f > 0.0) out.emplace_back(e, f);
  return out;
}

/// Per-element volume fraction of `cube` (dense, one entry per element).
template <int Dim>
std::vector<double> element_cube_fractions(const Mesh<Dim>& mesh, const Box<Dim>& cube, int depth = 3) {
  std::vector<double> out(mesh.num_elements(), 0.0);
  for (const auto& [e, f] : region_support(mesh, std::vector<Box<Dim>>{cube}, depth)) out[e] = f;
  return out;
}

}  // namespace elmono
