#include "elmono/io.hpp"
#include "elmono/pipeline.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace elmono;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("elmono_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json quick_config(const fs::path& out) {
  json j = json::parse(R"({
    "dimension": 3,
    "mesh": {"measurement_resolution": 5, "offline_resolution": 4},
    "patches": {"per_face_axis": 2},
    "inclusions": [{"lo": [-0.5, -0.5, -0.5], "hi": [0.0, 0.0, 0.0]}],
    "test_cubes": {"per_axis": 2},
    "seed": 9
  })");
  j["output_dir"] = out.string();
  return j;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST(Container, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e-7, 1e-7);
  io::MatrixContainer c;
  c.header = {{"kind", "difference"}, {"load_system_id", "abc"}};
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd a(7, 7);
    for (int i = 0; i < 49; ++i) a.data()[i] = u(rng);
    a(0, 0) = -0.0;
    a(1, 1) = std::numeric_limits<double>::denorm_min();
    c.matrices.push_back(a);
  }
  const auto dir = scratch("container");
  io::write_container(dir / "m.elmat", c);
  const auto back = io::read_container(dir / "m.elmat");
  ASSERT_EQ(back.matrices.size(), 3u);
  for (int k = 0; k < 3; ++k)
    EXPECT_EQ(std::memcmp(back.matrices[k].data(), c.matrices[k].data(), 49 * sizeof(double)), 0);
  EXPECT_EQ(back.header["m"], 7);
  EXPECT_EQ(back.header["count"], 3);
  EXPECT_EQ(back.header["load_system_id"], "abc");
  EXPECT_FALSE(fs::exists(dir / "m.elmat.tmp"));
  // Layout: magic, little-endian length, header, payload.
  const std::string bytes = slurp(dir / "m.elmat");
  EXPECT_EQ(bytes.substr(0, 8), "ELMOMAT1");
  std::uint64_t h = 0;
  for (int i = 7; i >= 0; --i) h = (h << 8) | static_cast<unsigned char>(bytes[8 + i]);
  EXPECT_EQ(bytes.size(), 16 + h + 3 * 49 * 8);
}

TEST(Container, RejectsCorruptInput) {
  EXPECT_THROW(io::decode_container("NOTMAGIC12345678"), ConfigError);
  io::MatrixContainer c;
  c.matrices.push_back(Eigen::MatrixXd::Identity(3, 3));
  std::string bytes = io::encode_container(c);
  EXPECT_THROW(io::decode_container(bytes.substr(0, bytes.size() - 1)), ConfigError);
  c.matrices.push_back(Eigen::MatrixXd::Identity(2, 2));
  EXPECT_THROW(io::encode_container(c), InvalidArgument);
}

TEST(Export, VtkAndCsvStructure) {
  const auto mesh = build_box_mesh(Box<3>::unit_centered(), 2);
  const auto material = material_background(mesh, 1.0, 2.0);
  const std::string v = io::vtk_mesh<3>(mesh, nullptr, &material);
  EXPECT_NE(v.find("POINTS 27 double"), std::string::npos);
  EXPECT_NE(v.find("CELLS 48 240"), std::string::npos);
  EXPECT_NE(v.find("CELL_DATA 48"), std::string::npos);

  const auto grid = build_test_cubes(Box<3>::unit_centered(), 2);
  ReconstructionResult r;
  for (int k = 0; k < 8; ++k) r.cubes.push_back({k, k - 3.5, k >= 4});
  const std::string vox = io::vtk_voxels<3>(grid.cubes, r);
  EXPECT_NE(vox.find("CELLS 8 72"), std::string::npos);
  EXPECT_NE(vox.find("CELL_TYPES 8\n11\n"), std::string::npos);
  EXPECT_NE(vox.find("SCALARS inside int 1"), std::string::npos);

  const std::string csv = io::result_csv<3>(r, grid.cubes);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,lo_x,lo_y,lo_z,hi_x,hi_y,hi_z,min_eigenvalue,inside");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);

  const auto cubes = json::parse(io::test_cubes_json(grid));
  EXPECT_EQ(cubes.size(), 8u);
  EXPECT_EQ(cubes[0]["lo"][0], -0.5);
}

TEST(Config, DefaultsMatchPreset) {
  const auto c = parse_config<3>(json::object());
  EXPECT_EQ(c.layout().load_count(), 125);
  EXPECT_EQ(c.lambda0, 6.6211e5);
  EXPECT_EQ(c.mu1, 2.3411e4);
  EXPECT_EQ(c.measurement_resolution, 12);
  EXPECT_EQ(c.offline_resolution, 10);
  EXPECT_EQ(c.dirichlet_face, (Face{2, 0}));
  EXPECT_EQ(c.domain, Box<3>::unit_centered());
}

TEST(Config, ShippedPresetsParse) {
  for (const char* name : {"preset_standard.json", "preset_linearized.json", "preset_noisy.json", "quick.json"}) {
    const auto c = load_config<3>(fs::path(ELMONO_SOURCE_DIR) / "configs" / name);
    EXPECT_EQ(c.inclusions.size(), 2u) << name;
  }
  const auto lin = load_config<3>(fs::path(ELMONO_SOURCE_DIR) / "configs/preset_linearized.json");
  EXPECT_NEAR(lin.resolved_contrasts().lambda, 0.28 * (2.3177e6 - 6.6211e5), 1e-6);
}

TEST(Config, ErrorsCarryPaths) {
  auto expect_error = [](const json& j, const std::string& fragment) {
    try {
      parse_config<3>(j);
      ADD_FAILURE() << "no error for " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_error({{"mesh", {{"offline_resolution", 12}}}}, "config.mesh");
  expect_error({{"mesh", {{"offline_resolution", "ten"}}}}, "config.mesh.offline_resolution");
  expect_error({{"material", {{"mu0", -1.0}}}}, "config.material.mu0");
  expect_error({{"bogus", 1}}, "config.bogus: unknown key");
  expect_error({{"test_cubes", {{"per_axis", 9}, {"offset", 0.05}}}}, "config.test_cubes");
  expect_error({{"method", "fancy"}}, "config.method");
  expect_error({{"contrasts", {{"alpha", 2e6}, {"beta", 1.0}}}}, "exceeds the standard raise bound");
  expect_error({{"method", "linearized"}, {"contrasts", {{"relative", 0.3}}}},
               "linearized raise bound");
  expect_error({{"direction", "lower"}}, "config.material");
  expect_error({{"inclusions", {{{"lo", {0, 0, 0}}, {"hi", {0.6, 0.1, 0.1}}}}}}, "config.inclusions[0]");
  expect_error({{"dimension", 4}}, "config.dimension");
  EXPECT_NO_THROW(parse_config<3>({{"mesh", {{"offline_resolution", 12}, {"allow_inverse_crime", true}}}}));
}

TEST(Pipeline, RunsAndIsDeterministic) {
  const auto dir_a = scratch("det_a"), dir_b = scratch("det_b");
  for (const auto& dir : {dir_a, dir_b}) {
    const auto c = parse_config<3>(quick_config(dir));
    std::ostringstream log;
    cmd_simulate(c, log);
    cmd_offline(c, log);
    const auto r = cmd_reconstruct(c, log);
    ASSERT_TRUE(r.score);
    EXPECT_EQ((*r.score)["recall_inside"], 1.0);
    EXPECT_EQ(r.delta_source, "data-error-bound");
  }
  for (const char* f : {"measurement.elmat", "bank_standard.elmat", "result_standard.json", "result_standard.vtk",
                        "eigenvalues_standard.csv", "score_standard.json", "truth.json", "test_cubes.json"})
    EXPECT_EQ(slurp(dir_a / f), slurp(dir_b / f)) << f;
}

TEST(Pipeline, NoisySimulationIsSeeded) {
  const auto dir = scratch("noise");
  auto j = quick_config(dir);
  j["noise"] = {{"level", 1e-3}};
  const auto c = parse_config<3>(j);
  std::ostringstream log;
  const auto a = cmd_simulate(c, log);
  const std::string first = slurp(dir / "measurement.elmat");
  const auto b = cmd_simulate(c, log);
  EXPECT_EQ(first, slurp(dir / "measurement.elmat"));
  EXPECT_EQ(a.measurement.kind, OperatorKind::NoisyDifference);
  EXPECT_GT(a.noise_norm, 0.0);
  EXPECT_GE(a.data_error_bound, 0.0);
  auto c2 = c;
  c2.noise.seed = 10;
  EXPECT_NE(cmd_simulate(c2, log).measurement.entries, b.measurement.entries);
}

TEST(Pipeline, NoInclusionWarns) {
  const auto dir = scratch("empty");
  auto j = quick_config(dir);
  j["inclusions"] = json::array();
  std::ostringstream log;
  const auto out = cmd_simulate(parse_config<3>(j), log);
  EXPECT_NE(log.str().find("warning"), std::string::npos);
  EXPECT_LE(out.measurement.entries.cwiseAbs().maxCoeff(), 1e-20);
}

TEST(Pipeline, OfflineSkipsWhenUpToDate) {
  const auto dir = scratch("skip");
  const auto c = parse_config<3>(quick_config(dir));
  std::ostringstream log;
  EXPECT_FALSE(cmd_offline(c, log).skipped);
  const auto again = cmd_offline(c, log);
  EXPECT_TRUE(again.skipped);
  EXPECT_EQ(again.operators.size(), 8u);
  auto changed = c;
  changed.contrasts = {ContrastSpec::Mode::Relative, 0, 0, 0.5};
  EXPECT_FALSE(cmd_offline(changed, log).skipped);
}

TEST(Pipeline, ReconstructRefusesMismatchedBank) {
  const auto dir = scratch("mismatch");
  const auto c = parse_config<3>(quick_config(dir));
  std::ostringstream log;
  cmd_simulate(c, log);
  cmd_offline(c, log);
  auto other = c;
  other.contrasts = {ContrastSpec::Mode::Relative, 0, 0, 0.5};
  try {
    cmd_reconstruct(other, log);
    FAIL() << "expected refusal";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos) << e.what();
  }
  auto layout_changed = c;
  layout_changed.patches_per_face_axis = 1;
  EXPECT_THROW(cmd_reconstruct(layout_changed, log), ConfigError);
}

TEST(Pipeline, LinearizedAndLowerDirections) {
  const auto dir = scratch("lin");
  auto j = quick_config(dir);
  j["method"] = "linearized";
  const auto c = parse_config<3>(j);
  std::ostringstream log;
  cmd_simulate(c, log);
  cmd_offline(c, log);
  const auto r = cmd_reconstruct(c, log);
  EXPECT_EQ((*r.score)["recall_inside"], 1.0);

  const auto dir2 = scratch("lower");
  auto k = quick_config(dir2);
  k["direction"] = "lower";
  k["material"] = {{"lambda0", 2.3177e6}, {"mu0", 2.3411e4}, {"lambda1", 6.6211e5}, {"mu1", 6.6892e3}};
  const auto c2 = parse_config<3>(k);
  cmd_simulate(c2, log);
  cmd_offline(c2, log);
  const auto r2 = cmd_reconstruct(c2, log);
  EXPECT_EQ((*r2.score)["recall_inside"], 1.0);
}

TEST(Pipeline, ExplicitDeltaOverrides) {
  const auto dir = scratch("delta");
  auto j = quick_config(dir);
  j["delta"] = 1.0;
  const auto c = parse_config<3>(j);
  std::ostringstream log;
  cmd_simulate(c, log);
  cmd_offline(c, log);
  const auto r = cmd_reconstruct(c, log);
  EXPECT_EQ(r.delta_source, "explicit");
  EXPECT_EQ(r.result.inside_count(), 8u);  // huge shift flags everything
}

TEST(Report, TableWithPlaceholders) {
  const auto dir = scratch("report");
  write_json(dir / "timings_standard.json", timings_to_json("standard", {0.5, 12.25, 0.125}));
  write_json(dir / "timings_linearized.json", timings_to_json("linearized", {0.5, 0.75, std::nullopt}));
  const auto r = cmd_report({dir / "timings_standard.json", dir / "timings_linearized.json"});
  EXPECT_EQ(r.table.size(), 2u);
  EXPECT_TRUE(r.table[1]["online_seconds"].is_null());
  std::istringstream lines(r.text);
  std::string header, row1, row2;
  std::getline(lines, header);
  std::getline(lines, row1);
  std::getline(lines, row2);
  EXPECT_NE(row1.find("12.250"), std::string::npos);
  EXPECT_EQ(row2.substr(row2.find_last_not_of(' ')), "-");
  EXPECT_THROW(cmd_report({}), ConfigError);
}

TEST(Timings, RoundedToMilliseconds) {
  EXPECT_EQ(round_ms(1.23456), 1.235);
  Stopwatch sw;
  EXPECT_GE(sw.seconds(), 0.0);
  EXPECT_THROW(timings_from_json({{"online_seconds", -1.0}}), ConfigError);
}
