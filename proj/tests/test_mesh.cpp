#include "elmono/mesh.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace elmono;

namespace {

Box<3> unit_box() { return {Point<3>::Zero(), Point<3>::Ones()}; }

double total_volume(const Mesh<3>& m) {
  double v = 0.0;
  for (double x : m.volumes) v += x;
  return v;
}

}  // namespace

TEST(Mesh, SingleCellCounts) {
  const auto m = build_box_mesh(unit_box(), 1);
  EXPECT_EQ(m.num_vertices(), 8u);
  EXPECT_EQ(m.num_elements(), 6u);
  EXPECT_EQ(m.boundary.size(), 12u);
}

TEST(Mesh, PresetDomainCounts) {
  const auto m = build_box_mesh(Box<3>::unit_centered(), 10);
  EXPECT_EQ(m.num_vertices(), 1331u);
  EXPECT_EQ(m.num_elements(), 6000u);
  EXPECT_EQ(m.boundary.size(), 6u * 100u * 2u);
}

TEST(Mesh, TwoDimensionalCounts) {
  const auto m = build_box_mesh(Box<2>::unit_centered(), 4);
  EXPECT_EQ(m.num_vertices(), 25u);
  EXPECT_EQ(m.num_elements(), 32u);
  EXPECT_EQ(m.boundary.size(), 16u);
}

TEST(Mesh, VolumePartitionAndOrientation) {
  for (int n : {1, 2, 3, 7, 12}) {
    const Box<3> box{Point<3>(-1.0, 0.0, 2.0), Point<3>(0.5, 0.3, 2.7)};
    const auto m = build_box_mesh(box, n);
    EXPECT_NEAR(total_volume(m), box.volume(), 1e-12 * box.volume()) << n;
    for (double v : m.volumes) EXPECT_GT(v, 0.0);
  }
  const auto m2 = build_box_mesh(Box<2>::unit_centered(), 5);
  double area = 0.0;
  for (double v : m2.volumes) {
    EXPECT_GT(v, 0.0);
    area += v;
  }
  EXPECT_NEAR(area, 1.0, 1e-12);
}

TEST(Mesh, BoundaryFacetsHaveOneOwner) {
  const auto m = build_box_mesh(Box<3>::unit_centered(), 3);
  for (const auto& b : m.boundary) {
    // The owner element contains all facet nodes.
    std::set<int> el(m.elements[b.element].begin(), m.elements[b.element].end());
    for (int v : b.nodes) EXPECT_TRUE(el.count(v));
  }
  // Facet areas cover the six faces.
  double area = 0.0;
  for (std::size_t f = 0; f < m.boundary.size(); ++f) area += m.facet_measure(f);
  EXPECT_NEAR(area, 6.0, 1e-12);
}

TEST(Mesh, DirichletFaceTagged) {
  const auto m = build_box_mesh(Box<3>::unit_centered(), 4);
  ASSERT_TRUE(m.has_dirichlet());
  for (std::size_t v = 0; v < m.num_vertices(); ++v)
    EXPECT_EQ(static_cast<bool>(m.dirichlet_vertex[v]), m.vertices[v].z() == -0.5);
}

TEST(Mesh, InvalidArguments) {
  EXPECT_THROW(build_box_mesh(unit_box(), 0), InvalidArgument);
  EXPECT_THROW(build_box_mesh(unit_box(), -3), InvalidArgument);
  EXPECT_THROW(build_box_mesh(Box<3>{Point<3>::Zero(), Point<3>(1, 0, 1)}, 2), InvalidArgument);
}

TEST(PatchLayout, PresetLoadCount) {
  const PatchLayout<3> layout;
  EXPECT_EQ(layout.load_count(), 125);
  const auto m = tag_boundary(build_box_mesh(Box<3>::unit_centered(), 10), layout);
  std::set<int> ids;
  for (const auto& b : m.boundary)
    if (b.tag != kDirichletTag) ids.insert(b.tag);
  EXPECT_EQ(ids.size(), 125u);
  EXPECT_EQ(*ids.begin(), 1);
  EXPECT_EQ(*ids.rbegin(), 125);
}

TEST(PatchLayout, OnePatchPerFace) {
  const PatchLayout<3> layout{Box<3>::unit_centered(), 1};
  EXPECT_EQ(layout.load_count(), 5);
  const auto m = tag_boundary(build_box_mesh(Box<3>::unit_centered(), 3), layout);
  std::set<int> ids;
  for (const auto& b : m.boundary) ids.insert(b.tag);
  EXPECT_EQ(ids, (std::set<int>{kDirichletTag, 1, 2, 3, 4, 5}));
}

TEST(PatchLayout, FacetCentroidsInsideTheirPatch) {
  const PatchLayout<3> layout;
  const auto m = tag_boundary(build_box_mesh(Box<3>::unit_centered(), 10), layout);
  for (std::size_t f = 0; f < m.boundary.size(); ++f) {
    const auto& b = m.boundary[f];
    if (b.tag == kDirichletTag) {
      EXPECT_EQ(b.face, layout.dirichlet_face);
      continue;
    }
    EXPECT_TRUE(layout.patch(b.tag).region.contains(m.facet_centroid(f))) << f;
  }
}

TEST(PatchLayout, PatchAreasPartitionNeumannBoundary) {
  const PatchLayout<3> layout;
  const auto m = tag_boundary(build_box_mesh(Box<3>::unit_centered(), 10), layout);
  std::vector<double> area(layout.load_count() + 1, 0.0);
  double neumann = 0.0;
  for (std::size_t f = 0; f < m.boundary.size(); ++f)
    if (m.boundary[f].tag > 0) {
      area[m.boundary[f].tag] += m.facet_measure(f);
      neumann += m.facet_measure(f);
    }
  double sum = 0.0;
  for (int k = 1; k <= layout.load_count(); ++k) {
    EXPECT_NEAR(area[k], 0.04, 1e-12);
    sum += area[k];
  }
  EXPECT_NEAR(sum, 5.0, 1e-12);
  EXPECT_NEAR(neumann, 5.0, 1e-12);
}

TEST(PatchLayout, IndivisibleResolutionRejected) {
  EXPECT_THROW(tag_boundary(build_box_mesh(Box<3>::unit_centered(), 12), PatchLayout<3>{}), InvalidArgument);
  EXPECT_THROW(PatchLayout<3>{}.patch(0), InvalidArgument);
  EXPECT_THROW(PatchLayout<3>{}.patch(126), InvalidArgument);
}

TEST(TestCubes, StandardGridSizes) {
  const auto domain = Box<3>::unit_centered();
  EXPECT_EQ(build_test_cubes(domain, 10).size(), 1000u);
  EXPECT_EQ(build_test_cubes(domain, 14).size(), 2744u);
  const auto shifted = build_test_cubes<3>(domain, 9, Point<3>(Point<3>::Constant(0.05)), Point<3>(Point<3>::Constant(0.1)));
  EXPECT_EQ(shifted.size(), 729u);
  const auto mesh = build_box_mesh(domain, 10);
  for (const auto& c : shifted.cubes) EXPECT_FALSE(cube_aligned_with(mesh, c));
}

TEST(TestCubes, DisjointAndInsideDomain) {
  const auto domain = Box<3>::unit_centered();
  const auto g = build_test_cubes(domain, 4);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_TRUE(domain.contains(g.cubes[i], 1e-12));
    for (std::size_t j = i + 1; j < g.size(); ++j) EXPECT_EQ(g.cubes[i].overlap_volume(g.cubes[j]), 0.0);
  }
  // Lowest axis runs fastest.
  EXPECT_LT(g.cubes[0].lo.x(), g.cubes[1].lo.x());
  EXPECT_EQ(g.cubes[0].lo.z(), g.cubes[1].lo.z());
}

TEST(TestCubes, OffsetLeavingDomainRejected) {
  EXPECT_THROW(build_test_cubes(Box<3>::unit_centered(), 10, Point<3>(Point<3>::Constant(0.05))), InvalidArgument);
  EXPECT_THROW(build_test_cubes(Box<3>::unit_centered(), 0), InvalidArgument);
}

TEST(Fractions, AlignedCubeIsExactlyZeroOrOne) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 10);
  const Box<3> cube{Point<3>(-0.3, -0.1, 0.1), Point<3>(-0.1, 0.1, 0.3)};
  ASSERT_TRUE(cube_aligned_with(mesh, cube));
  const auto f = element_cube_fractions(mesh, cube);
  double vol = 0.0;
  for (std::size_t e = 0; e < f.size(); ++e) {
    EXPECT_TRUE(f[e] == 0.0 || f[e] == 1.0);
    vol += f[e] * mesh.volumes[e];
  }
  EXPECT_NEAR(vol, cube.volume(), 1e-14);
}

TEST(Fractions, WholeDomainIsOne) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 4);
  for (double x : element_cube_fractions(mesh, Box<3>::unit_centered())) EXPECT_EQ(x, 1.0);
}

TEST(Fractions, ShiftedCubeVolumeWithinOnePercent) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 10);
  const auto grid = build_test_cubes<3>(Box<3>::unit_centered(), 9, Point<3>(Point<3>::Constant(0.05)), Point<3>(Point<3>::Constant(0.1)));
  for (int k : {0, 100, 364, 728}) {
    const auto& cube = grid.cubes[k];
    const auto f = element_cube_fractions(mesh, cube, 3);
    double vol = 0.0;
    for (std::size_t e = 0; e < f.size(); ++e) {
      EXPECT_GE(f[e], 0.0);
      EXPECT_LE(f[e], 1.0);
      vol += f[e] * mesh.volumes[e];
    }
    EXPECT_NEAR(vol, cube.volume(), 0.01 * cube.volume()) << k;
  }
}

TEST(Fractions, MonotoneInTheCube) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 6);
  const Box<3> small{Point<3>(-0.21, -0.13, 0.02), Point<3>(0.07, 0.11, 0.29)};
  const Box<3> big{Point<3>(-0.33, -0.17, -0.05), Point<3>(0.19, 0.23, 0.41)};
  ASSERT_TRUE(big.contains(small));
  const auto fs = element_cube_fractions(mesh, small, 3);
  const auto fb = element_cube_fractions(mesh, big, 3);
  for (std::size_t e = 0; e < fs.size(); ++e) EXPECT_LE(fs[e], fb[e]);
}

TEST(Fractions, UnionOfBoxesCountsOverlapOnce) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 5);
  const Box<3> a{Point<3>(-0.5, -0.5, -0.5), Point<3>(0.1, 0.1, 0.1)};
  const Box<3> b{Point<3>(-0.1, -0.1, -0.1), Point<3>(0.5, 0.5, 0.5)};
  for (const auto& [e, f] : region_support(mesh, std::vector<Box<3>>{a, b})) EXPECT_LE(f, 1.0) << e;
}
