#pragma once

// File formats: binary matrix container (JSON header + row-major float64),
// legacy VTK text, JSON and CSV tables. All writers go through a temporary
// file and rename, so readers never observe partial outputs.

#include "elmono/monotest.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace elmono::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// Matrix container
//
//   offset 0   8 bytes   magic "ELMOMAT1"
//   offset 8   8 bytes   header length H, unsigned little-endian
//   offset 16  H bytes   UTF-8 JSON header; must contain "m" and "count"
//   then       count * m * m little-endian IEEE-754 doubles, row-major,
//              matrices stored back to back

inline constexpr char kMagic[8] = {'E', 'L', 'M', 'O', 'M', 'A', 'T', '1'};

struct MatrixContainer {
  json header = json::object();
  std::vector<Eigen::MatrixXd> matrices;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

}  // namespace detail

inline std::string encode_container(const MatrixContainer& c) {
  const std::size_t m = c.matrices.empty() ? 0 : static_cast<std::size_t>(c.matrices.front().rows());
  for (const auto& a : c.matrices)
    if (static_cast<std::size_t>(a.rows()) != m || static_cast<std::size_t>(a.cols()) != m)
      throw InvalidArgument("matrix container: all matrices must be m x m");
  json header = c.header;
  header["format"] = "elmono-matrix";
  header["version"] = 1;
  header["m"] = m;
  header["count"] = c.matrices.size();
  const std::string h = header.dump();
  std::string out(kMagic, 8);
  detail::put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + c.matrices.size() * m * m * 8);
  for (const auto& a : c.matrices)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) detail::put_f64(out, a(i, j));
  return out;
}

inline MatrixContainer decode_container(const std::string& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw ConfigError(origin + ": not an elmono matrix container");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t hlen = detail::get_u64(p + 8);
  if (16 + hlen > bytes.size()) throw ConfigError(origin + ": truncated header");
  MatrixContainer c;
  try {
    c.header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": malformed header: " + e.what());
  }
  const std::size_t m = c.header.at("m").get<std::size_t>();
  const std::size_t count = c.header.at("count").get<std::size_t>();
  if (bytes.size() != 16 + hlen + count * m * m * 8)
    throw ConfigError(origin + ": payload size does not match m and count");
  const unsigned char* q = p + 16 + hlen;
  c.matrices.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::MatrixXd a(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j, q += 8) a(i, j) = std::bit_cast<double>(detail::get_u64(q));
    c.matrices.push_back(std::move(a));
  }
  return c;
}

inline void write_container(const fs::path& path, const MatrixContainer& c) {
  write_atomic(path, encode_container(c));
}

inline MatrixContainer read_container(const fs::path& path) {
  return decode_container(read_file(path), path.string());
}

/// Header fields describing one operator matrix.
inline json operator_header(const OperatorMatrix& a) {
  return {{"kind", std::string(to_string(a.kind))}, {"load_system_id", a.load_system_id}};
}

inline std::string matrix_csv(const Eigen::MatrixXd& a) {
  std::ostringstream os;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) os << (j ? "," : "") << format_double(a(i, j));
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON helpers

template <int Dim>
json to_json(const Point<Dim>& p) {
  json a = json::array();
  for (int i = 0; i < Dim; ++i) a.push_back(p[i]);
  return a;
}

template <int Dim>
Point<Dim> point_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(Dim))
    throw ConfigError(where + ": expected an array of " + std::to_string(Dim) + " numbers");
  Point<Dim> p;
  for (int i = 0; i < Dim; ++i) {
    if (!j[i].is_number()) throw ConfigError(where + "[" + std::to_string(i) + "]: expected a number");
    p[i] = j[i].get<double>();
  }
  return p;
}

template <int Dim>
json to_json(const Box<Dim>& b) {
  return {{"lo", to_json<Dim>(b.lo)}, {"hi", to_json<Dim>(b.hi)}};
}

template <int Dim>
Box<Dim> box_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("lo") || !j.contains("hi"))
    throw ConfigError(where + ": expected an object with 'lo' and 'hi'");
  Box<Dim> b{point_from_json<Dim>(j["lo"], where + ".lo"), point_from_json<Dim>(j["hi"], where + ".hi")};
  if (!b.valid()) throw ConfigError(where + ": 'hi' must exceed 'lo' on every axis");
  return b;
}

template <int Dim>
std::string test_cubes_json(const TestCubeGrid<Dim>& grid) {
  json a = json::array();
  for (const auto& c : grid.cubes) a.push_back(to_json<Dim>(c));
  return a.dump(2) + "\n";
}

template <int Dim>
json result_json(const ReconstructionResult& r, const std::vector<Box<Dim>>& cubes) {
  json cubes_json = json::array();
  for (std::size_t k = 0; k < r.cubes.size(); ++k) {
    json c = {{"index", r.cubes[k].index},
              {"min_eigenvalue", r.cubes[k].min_eigenvalue},
              {"inside", r.cubes[k].inside}};
    if (k < cubes.size()) c["cube"] = to_json<Dim>(cubes[k]);
    cubes_json.push_back(std::move(c));
  }
  return {{"method", std::string(to_string(r.method))},
          {"direction", std::string(to_string(r.direction))},
          {"delta", r.delta},
          {"noise", {{"level", r.noise.level}, {"seed", r.noise.seed}}},
          {"inside_count", r.inside_count()},
          {"cubes", std::move(cubes_json)}};
}

template <int Dim>
std::string result_csv(const ReconstructionResult& r, const std::vector<Box<Dim>>& cubes) {
  std::ostringstream os;
  os << "index";
  const char* axes = "xyz";
  for (int a = 0; a < Dim; ++a) os << ",lo_" << axes[a];
  for (int a = 0; a < Dim; ++a) os << ",hi_" << axes[a];
  os << ",min_eigenvalue,inside\n";
  for (std::size_t k = 0; k < r.cubes.size(); ++k) {
    os << r.cubes[k].index;
    for (int a = 0; a < Dim; ++a) os << ',' << format_double(cubes[k].lo[a]);
    for (int a = 0; a < Dim; ++a) os << ',' << format_double(cubes[k].hi[a]);
    os << ',' << format_double(r.cubes[k].min_eigenvalue) << ',' << (r.cubes[k].inside ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Legacy VTK (ASCII unstructured grid)

namespace detail {

template <int Dim>
void vtk_point(std::ostream& os, const Point<Dim>& p) {
  os << format_double(p[0]) << ' ' << format_double(p[1]) << ' ' << (Dim == 3 ? format_double(p[Dim - 1]) : "0")
     << '\n';
}

}  // namespace detail

/// Mesh with optional nodal displacement (POINT_DATA) and Lamé coefficients
/// (CELL_DATA).
template <int Dim>
std::string vtk_mesh(const Mesh<Dim>& mesh, const DisplacementField<Dim>* displacement = nullptr,
                     const MaterialField<Dim>* material = nullptr) {
  std::ostringstream os;
  os << "# vtk DataFile Version 3.0\nelmono mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << mesh.num_vertices() << " double\n";
  for (const auto& v : mesh.vertices) detail::vtk_point<Dim>(os, v);
  const std::size_t ne = mesh.num_elements();
  os << "CELLS " << ne << ' ' << ne * (Dim + 2) << '\n';
  for (const auto& el : mesh.elements) {
    os << Dim + 1;
    for (int v : el) os << ' ' << v;
    os << '\n';
  }
  os << "CELL_TYPES " << ne << '\n';
  for (std::size_t e = 0; e < ne; ++e) os << (Dim == 3 ? 10 : 5) << '\n';
  if (material) {
    if (material->size() != ne) throw InvalidArgument("vtk_mesh: material does not match mesh");
    os << "CELL_DATA " << ne << "\nSCALARS lambda double 1\nLOOKUP_TABLE default\n";
    for (double x : material->lambda) os << format_double(x) << '\n';
    os << "SCALARS mu double 1\nLOOKUP_TABLE default\n";
    for (double x : material->mu) os << format_double(x) << '\n';
  }
  if (displacement) {
    if (static_cast<std::size_t>(displacement->values.size()) != mesh.num_vertices() * Dim)
      throw InvalidArgument("vtk_mesh: displacement does not match mesh");
    os << "POINT_DATA " << mesh.num_vertices() << "\nVECTORS displacement double\n";
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
      const auto u = displacement->at(v);
      os << format_double(u[0]) << ' ' << format_double(u[1]) << ' ' << (Dim == 3 ? format_double(u[Dim - 1]) : "0")
         << '\n';
    }
  }
  return os.str();
}

/// Test cubes as VTK_VOXEL (3-D) or VTK_PIXEL (2-D) cells carrying the
/// eigenvalue and the inside flag.
template <int Dim>
std::string vtk_voxels(const std::vector<Box<Dim>>& cubes, const ReconstructionResult& r) {
  if (cubes.size() != r.cubes.size()) throw InvalidArgument("vtk_voxels: cube list does not match result");
  constexpr int kCorners = 1 << Dim;
  std::ostringstream os;
  os << "# vtk DataFile Version 3.0\nelmono reconstruction\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << cubes.size() * kCorners << " double\n";
  for (const auto& c : cubes)
    for (int k = 0; k < kCorners; ++k) {
      Point<Dim> p;
      for (int a = 0; a < Dim; ++a) p[a] = (k >> a) & 1 ? c.hi[a] : c.lo[a];
      detail::vtk_point<Dim>(os, p);
    }
  os << "CELLS " << cubes.size() << ' ' << cubes.size() * (kCorners + 1) << '\n';
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    os << kCorners;
    for (int k = 0; k < kCorners; ++k) os << ' ' << i * kCorners + k;
    os << '\n';
  }
  os << "CELL_TYPES " << cubes.size() << '\n';
  for (std::size_t i = 0; i < cubes.size(); ++i) os << (Dim == 3 ? 11 : 8) << '\n';
  os << "CELL_DATA " << cubes.size() << "\nSCALARS min_eigenvalue double 1\nLOOKUP_TABLE default\n";
  for (const auto& c : r.cubes) os << format_double(c.min_eigenvalue) << '\n';
  os << "SCALARS inside int 1\nLOOKUP_TABLE default\n";
  for (const auto& c : r.cubes) os << (c.inside ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace elmono::io
