#pragma once

// End-to-end experiment: simulate a measurement, build the offline operator
// bank, run the online test, export and report timings.

#include "elmono/frechet.hpp"
#include "elmono/io.hpp"
#include "elmono/monotest.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>
#include <set>

namespace elmono {

using json = nlohmann::json;

struct ContrastSpec {
  enum class Mode { Auto, Absolute, Relative };
  Mode mode = Mode::Auto;
  double alpha = 0.0;
  double beta = 0.0;
  double relative = 1.0;
};

template <int Dim>
struct ExperimentConfig {
  Box<Dim> domain = Box<Dim>::unit_centered();
  int measurement_resolution = 12;
  int offline_resolution = 10;
  bool allow_inverse_crime = false;
  int patches_per_face_axis = 5;
  Face dirichlet_face = default_dirichlet_face<Dim>();
  double lambda0 = 6.6211e5;
  double mu0 = 6.6892e3;
  double lambda1 = 2.3177e6;
  double mu1 = 2.3411e4;
  std::vector<Box<Dim>> inclusions;
  int cubes_per_axis = 5;
  Point<Dim> cube_offset = Point<Dim>::Zero();
  std::optional<Point<Dim>> cube_size;
  int fraction_depth = 3;
  Method method = Method::Standard;
  Direction direction = Direction::Raise;
  ContrastSpec contrasts;
  NoiseSpec noise;
  std::optional<double> delta;  // nullopt: automatic
  std::string output_dir = "out";
  unsigned workers = 1;

  PatchLayout<Dim> layout() const { return {domain, patches_per_face_axis, dirichlet_face}; }
  Lame background() const { return {lambda0, mu0}; }
  Lame inclusion() const { return {lambda1, mu1}; }

  /// (alpha, beta) actually used by the test.
  Lame resolved_contrasts() const {
    const Lame bound = contrast_bound(method, direction, background(), inclusion());
    switch (contrasts.mode) {
      case ContrastSpec::Mode::Auto: return bound;
      case ContrastSpec::Mode::Absolute: return {contrasts.alpha, contrasts.beta};
      case ContrastSpec::Mode::Relative:
        return {contrasts.relative * std::abs(lambda1 - lambda0), contrasts.relative * std::abs(mu1 - mu0)};
    }
    return bound;
  }

  TestCubeGrid<Dim> cubes() const { return build_test_cubes(domain, cubes_per_axis, cube_offset, cube_size); }

  std::vector<Inclusion<Dim>> inclusion_list() const {
    std::vector<Inclusion<Dim>> out;
    for (const auto& b : inclusions) out.push_back({b, inclusion()});
    return out;
  }
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& at(const std::string& key) const {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing");
    return j_.at(key);
  }
  std::string sub(const std::string& key) const { return path_ + "." + key; }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(sub(key) + ": missing");
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(sub(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(sub(key) + ": expected a finite number");
    return x;
  }
  double positive(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    const double x = number(key, fallback);
    if (!(x > 0.0)) throw ConfigError(sub(key) + ": must be > 0, got " + io::format_double(x));
    return x;
  }
  long long integer(const std::string& key, std::optional<long long> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(sub(key) + ": missing");
    }
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(sub(key) + ": expected an integer");
    return v.get<long long>();
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw ConfigError(sub(key) + ": expected true or false");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, std::string fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) throw ConfigError(sub(key) + ": expected a string");
    return j_.at(key).get<std::string>();
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(sub(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

template <int Dim>
Point<Dim> scalar_or_point(const json& j, const std::string& where) {
  if (j.is_number()) return Point<Dim>::Constant(j.get<double>());
  return io::point_from_json<Dim>(j, where);
}

}  // namespace detail

/// Spatial dimension declared by a config document (default 3).
inline int config_dimension(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  if (!j.contains("dimension")) return 3;
  if (!j["dimension"].is_number_integer()) throw ConfigError("config.dimension: expected 2 or 3");
  const int d = j["dimension"].get<int>();
  if (d != 2 && d != 3) throw ConfigError("config.dimension: expected 2 or 3, got " + std::to_string(d));
  return d;
}

template <int Dim>
void validate_config(const ExperimentConfig<Dim>& c) {
  if (!c.domain.valid()) throw ConfigError("config.domain: invalid box");
  if (c.measurement_resolution < 1) throw ConfigError("config.mesh.measurement_resolution: must be >= 1");
  if (c.offline_resolution < 1) throw ConfigError("config.mesh.offline_resolution: must be >= 1");
  if (c.measurement_resolution == c.offline_resolution && !c.allow_inverse_crime)
    throw ConfigError("config.mesh: measurement and offline resolutions are both " +
                      std::to_string(c.offline_resolution) +
                      "; use distinct meshes or set mesh.allow_inverse_crime = true");
  if (c.patches_per_face_axis < 1) throw ConfigError("config.patches.per_face_axis: must be >= 1");
  if (c.dirichlet_face.axis < 0 || c.dirichlet_face.axis >= Dim || c.dirichlet_face.side < 0 ||
      c.dirichlet_face.side > 1)
    throw ConfigError("config.patches.dirichlet_face: invalid face");
  if (!(c.lambda0 > 0.0) || !(c.mu0 > 0.0) || !(c.lambda1 > 0.0) || !(c.mu1 > 0.0))
    throw ConfigError("config.material: all Lamé parameters must be > 0");
  for (std::size_t i = 0; i < c.inclusions.size(); ++i)
    if (!c.domain.contains(c.inclusions[i], 1e-12))
      throw ConfigError("config.inclusions[" + std::to_string(i) + "]: box leaves the domain");
  if (c.cubes_per_axis < 1) throw ConfigError("config.test_cubes.per_axis: must be >= 1");
  if (c.fraction_depth < 0 || c.fraction_depth > 6)
    throw ConfigError("config.test_cubes.fraction_depth: must be in [0, 6]");
  try {
    c.cubes();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config.test_cubes: ") + e.what());
  }
  if (!(c.noise.level >= 0.0)) throw ConfigError("config.noise.level: must be >= 0");
  if (c.delta && !(*c.delta >= 0.0)) throw ConfigError("config.delta: must be >= 0");
  if (c.workers < 1) throw ConfigError("config.workers: must be >= 1");

  Lame bound;
  try {
    bound = contrast_bound(c.method, c.direction, c.background(), c.inclusion());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config.material: ") + e.what());
  }
  const Lame used = c.resolved_contrasts();
  if (!(used.lambda >= 0.0) || !(used.mu >= 0.0) || !(used.lambda + used.mu > 0.0))
    throw ConfigError("config.contrasts: need alpha, beta >= 0 and alpha + beta > 0");
  const double slack = 1e-12;
  const std::string name = std::string(to_string(c.method)) + " " + std::string(to_string(c.direction));
  if (used.lambda > bound.lambda * (1.0 + slack))
    throw ConfigError("config.contrasts.alpha = " + io::format_double(used.lambda) + " exceeds the " + name +
                      " bound " + io::format_double(bound.lambda));
  if (used.mu > bound.mu * (1.0 + slack))
    throw ConfigError("config.contrasts.beta = " + io::format_double(used.mu) + " exceeds the " + name +
                      " bound " + io::format_double(bound.mu));
}

template <int Dim>
ExperimentConfig<Dim> parse_config(const json& j) {
  if (config_dimension(j) != Dim) throw ConfigError("config.dimension: does not match the requested dimension");
  detail::JsonReader r(j, "config");
  ExperimentConfig<Dim> c;
  r.has("dimension");
  if (r.has("domain")) c.domain = io::box_from_json<Dim>(r.at("domain"), r.sub("domain"));

  if (r.has("mesh")) {
    detail::JsonReader m(r.at("mesh"), r.sub("mesh"));
    c.measurement_resolution = static_cast<int>(m.integer("measurement_resolution", c.measurement_resolution));
    c.offline_resolution = static_cast<int>(m.integer("offline_resolution", c.offline_resolution));
    c.allow_inverse_crime = m.boolean("allow_inverse_crime", false);
    m.reject_unknown();
  }
  if (r.has("patches")) {
    detail::JsonReader p(r.at("patches"), r.sub("patches"));
    c.patches_per_face_axis = static_cast<int>(p.integer("per_face_axis", c.patches_per_face_axis));
    if (p.has("dirichlet_face")) {
      detail::JsonReader f(p.at("dirichlet_face"), p.sub("dirichlet_face"));
      c.dirichlet_face.axis = static_cast<int>(f.integer("axis"));
      const std::string side = f.string("side", "low");
      if (side != "low" && side != "high") throw ConfigError(f.sub("side") + ": expected \"low\" or \"high\"");
      c.dirichlet_face.side = side == "high";
      f.reject_unknown();
    }
    p.reject_unknown();
  }
  if (r.has("material")) {
    detail::JsonReader m(r.at("material"), r.sub("material"));
    c.lambda0 = m.positive("lambda0", c.lambda0);
    c.mu0 = m.positive("mu0", c.mu0);
    c.lambda1 = m.positive("lambda1", c.lambda1);
    c.mu1 = m.positive("mu1", c.mu1);
    m.reject_unknown();
  }
  if (r.has("inclusions")) {
    const auto& a = r.at("inclusions");
    if (!a.is_array()) throw ConfigError(r.sub("inclusions") + ": expected an array of boxes");
    for (std::size_t i = 0; i < a.size(); ++i)
      c.inclusions.push_back(io::box_from_json<Dim>(a[i], r.sub("inclusions") + "[" + std::to_string(i) + "]"));
  }
  if (r.has("test_cubes")) {
    detail::JsonReader t(r.at("test_cubes"), r.sub("test_cubes"));
    c.cubes_per_axis = static_cast<int>(t.integer("per_axis", c.cubes_per_axis));
    if (t.has("offset")) c.cube_offset = detail::scalar_or_point<Dim>(t.at("offset"), t.sub("offset"));
    if (t.has("size")) c.cube_size = detail::scalar_or_point<Dim>(t.at("size"), t.sub("size"));
    c.fraction_depth = static_cast<int>(t.integer("fraction_depth", c.fraction_depth));
    t.reject_unknown();
  }
  try {
    c.method = method_from_string(r.string("method", "standard"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.sub("method") + ": " + e.what());
  }
  try {
    c.direction = direction_from_string(r.string("direction", "raise"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.sub("direction") + ": " + e.what());
  }
  if (r.has("contrasts")) {
    const auto& cj = r.at("contrasts");
    if (cj.is_string()) {
      if (cj.get<std::string>() != "auto") throw ConfigError(r.sub("contrasts") + ": expected \"auto\" or an object");
    } else {
      detail::JsonReader k(cj, r.sub("contrasts"));
      if (k.has("relative")) {
        c.contrasts.mode = ContrastSpec::Mode::Relative;
        c.contrasts.relative = k.positive("relative");
      } else {
        c.contrasts.mode = ContrastSpec::Mode::Absolute;
        c.contrasts.alpha = k.number("alpha");
        c.contrasts.beta = k.number("beta");
      }
      k.reject_unknown();
    }
  }
  if (r.has("noise")) {
    detail::JsonReader n(r.at("noise"), r.sub("noise"));
    c.noise.level = n.number("level", 0.0);
    n.reject_unknown();
  }
  if (r.has("delta")) {
    const auto& d = r.at("delta");
    if (d.is_string()) {
      if (d.get<std::string>() != "auto") throw ConfigError(r.sub("delta") + ": expected \"auto\" or a number");
    } else {
      c.delta = r.number("delta");
    }
  }
  if (r.has("seed")) {
    const auto& s = r.at("seed");
    if (!s.is_number_unsigned()) throw ConfigError(r.sub("seed") + ": expected a non-negative integer");
    c.noise.seed = s.get<std::uint64_t>();
  }
  c.workers = static_cast<unsigned>(r.integer("workers", 1));
  c.output_dir = r.string("output_dir", c.output_dir);
  r.reject_unknown();
  validate_config(c);
  return c;
}

template <int Dim>
ExperimentConfig<Dim> load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config<Dim>(j);
}

template <int Dim>
json config_to_json(const ExperimentConfig<Dim>& c) {
  json inc = json::array();
  for (const auto& b : c.inclusions) inc.push_back(io::to_json<Dim>(b));
  const Lame k = c.resolved_contrasts();
  json j = {{"dimension", Dim},
            {"domain", io::to_json<Dim>(c.domain)},
            {"mesh",
             {{"measurement_resolution", c.measurement_resolution},
              {"offline_resolution", c.offline_resolution},
              {"allow_inverse_crime", c.allow_inverse_crime}}},
            {"patches",
             {{"per_face_axis", c.patches_per_face_axis},
              {"dirichlet_face", {{"axis", c.dirichlet_face.axis}, {"side", c.dirichlet_face.side ? "high" : "low"}}}}},
            {"material", {{"lambda0", c.lambda0}, {"mu0", c.mu0}, {"lambda1", c.lambda1}, {"mu1", c.mu1}}},
            {"inclusions", inc},
            {"test_cubes",
             {{"per_axis", c.cubes_per_axis},
              {"offset", io::to_json<Dim>(c.cube_offset)},
              {"fraction_depth", c.fraction_depth}}},
            {"method", std::string(to_string(c.method))},
            {"direction", std::string(to_string(c.direction))},
            {"contrasts", {{"alpha", k.lambda}, {"beta", k.mu}}},
            {"noise", {{"level", c.noise.level}}},
            {"seed", c.noise.seed},
            {"workers", c.workers},
            {"output_dir", c.output_dir}};
  if (c.cube_size) j["test_cubes"]["size"] = io::to_json<Dim>(*c.cube_size);
  j["delta"] = c.delta ? json(*c.delta) : json("auto");
  return j;
}

// ---------------------------------------------------------------------------
// Artifacts

struct PhaseTimings {
  std::optional<double> direct_seconds;
  std::optional<double> offline_seconds;
  std::optional<double> online_seconds;
};

inline double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

class Stopwatch {
 public:
  double seconds() const {
    return round_ms(std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline json timings_to_json(const std::string& method, const PhaseTimings& t) {
  auto opt = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
  return {{"method", method},
          {"direct_seconds", opt(t.direct_seconds)},
          {"offline_seconds", opt(t.offline_seconds)},
          {"online_seconds", opt(t.online_seconds)}};
}

inline PhaseTimings timings_from_json(const json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_number()) throw ConfigError(std::string("timings.") + key + ": expected a number or null");
    const double x = j[key].get<double>();
    if (!(x >= 0.0)) throw ConfigError(std::string("timings.") + key + ": must be >= 0");
    return x;
  };
  return {opt("direct_seconds"), opt("offline_seconds"), opt("online_seconds")};
}

struct ArtifactPaths {
  std::filesystem::path dir;

  std::filesystem::path measurement() const { return dir / "measurement.elmat"; }
  std::filesystem::path truth() const { return dir / "truth.json"; }
  std::filesystem::path simulate_timing() const { return dir / "simulate_timing.json"; }
  std::filesystem::path test_cubes() const { return dir / "test_cubes.json"; }
  std::filesystem::path bank(Method m) const { return dir / ("bank_" + std::string(to_string(m)) + ".elmat"); }
  std::filesystem::path bank_timing(Method m) const {
    return dir / ("bank_" + std::string(to_string(m)) + ".timing.json");
  }
  std::filesystem::path result_json(Method m) const { return dir / ("result_" + std::string(to_string(m)) + ".json"); }
  std::filesystem::path result_vtk(Method m) const { return dir / ("result_" + std::string(to_string(m)) + ".vtk"); }
  std::filesystem::path eigen_csv(Method m) const {
    return dir / ("eigenvalues_" + std::string(to_string(m)) + ".csv");
  }
  std::filesystem::path score(Method m) const { return dir / ("score_" + std::string(to_string(m)) + ".json"); }
  std::filesystem::path timings(Method m) const { return dir / ("timings_" + std::string(to_string(m)) + ".json"); }
  std::filesystem::path material_vtk() const { return dir / "measurement_material.vtk"; }
};

inline void write_json(const std::filesystem::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Everything the offline bank depends on; its hash is the bank key.
template <int Dim>
json bank_provenance(const ExperimentConfig<Dim>& c, const Mesh<Dim>& offline_mesh) {
  const auto grid = c.cubes();
  Hasher cubes;
  for (const auto& b : grid.cubes) cubes.add(b);
  const Lame k = c.resolved_contrasts();
  json j = {{"method", std::string(to_string(c.method))},
            {"direction", std::string(to_string(c.direction))},
            {"alpha", k.lambda},
            {"beta", k.mu},
            {"lambda0", c.lambda0},
            {"mu0", c.mu0},
            {"load_system_id", layout_hash(c.layout())},
            {"offline_mesh_hash", mesh_hash(offline_mesh)},
            {"cube_count", grid.size()},
            {"cubes_hash", cubes.hex()}};
  // The fraction depth only affects cubes that are not aligned with the mesh.
  j["fraction_depth"] = c.fraction_depth;
  return j;
}

inline std::string json_key(const json& j) { return Hasher().add(std::string_view(j.dump())).hex(); }

/// "field: stored vs expected" lines for every differing key.
inline std::vector<std::string> diff_summary(const json& stored, const json& expected) {
  std::vector<std::string> out;
  for (auto it = expected.begin(); it != expected.end(); ++it) {
    const bool present = stored.contains(it.key());
    if (!present || stored[it.key()] != it.value())
      out.push_back(it.key() + ": " + (present ? stored[it.key()].dump() : std::string("<missing>")) + " vs " +
                    it.value().dump());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct SimulateOutput {
  OperatorMatrix measurement;
  double noise_norm = 0.0;        // ‖Λ^δ − Λ_D‖₂ on the measurement mesh
  double data_error_bound = 0.0;  // ‖Λ^δ − Λ_D‖₂ against the offline-mesh model
  double direct_seconds = 0.0;
};

/// Λ_D on the measurement mesh, optional noise, truth metadata. Also
/// evaluates Λ_D for the same inclusions on the offline mesh, so the
/// reconstruction can use the total data error against the offline model
/// as its automatic δ.
template <int Dim>
SimulateOutput cmd_simulate(const ExperimentConfig<Dim>& c, std::ostream& log = std::cerr) {
  validate_config(c);
  const ArtifactPaths paths{c.output_dir};
  const auto layout = c.layout();
  if (c.inclusions.empty()) log << "warning: no inclusions configured; the measurement is (near) zero\n";

  Stopwatch direct;
  const auto mesh = build_box_mesh(c.domain, c.measurement_resolution, c.dirichlet_face);
  const auto clean = difference_measurement(mesh, c.lambda0, c.mu0, c.inclusion_list(), layout);
  SimulateOutput out;
  out.direct_seconds = direct.seconds();
  out.measurement = add_noise(clean, c.noise);
  if (c.noise.level == 0.0) out.measurement.kind = OperatorKind::Difference;
  out.noise_norm = spectral_norm(out.measurement.entries - clean.entries);

  const auto offline_mesh = build_box_mesh(c.domain, c.offline_resolution, c.dirichlet_face);
  const auto model = difference_measurement(offline_mesh, c.lambda0, c.mu0, c.inclusion_list(), layout);
  out.data_error_bound = spectral_norm(out.measurement.entries - model.entries);

  io::MatrixContainer container;
  json inc = json::array();
  for (const auto& b : c.inclusions) inc.push_back(io::to_json<Dim>(b));
  container.header = {{"kind", std::string(to_string(out.measurement.kind))},
                      {"load_system_id", out.measurement.load_system_id},
                      {"mesh_hash", mesh_hash(mesh)},
                      {"offline_mesh_hash", mesh_hash(offline_mesh)},
                      {"dimension", Dim},
                      {"domain", io::to_json<Dim>(c.domain)},
                      {"patches_per_face_axis", c.patches_per_face_axis},
                      {"dirichlet_face", c.dirichlet_face.index()},
                      {"lambda0", c.lambda0},
                      {"mu0", c.mu0},
                      {"lambda1", c.lambda1},
                      {"mu1", c.mu1},
                      {"inclusions", inc},
                      {"noise", {{"level", c.noise.level}, {"seed", c.noise.seed}}},
                      {"noise_norm", out.noise_norm},
                      {"data_error_bound", out.data_error_bound},
                      {"largest_abs_eigenvalue", spectral_norm(out.measurement.entries)}};
  container.matrices.push_back(out.measurement.entries);
  io::write_container(paths.measurement(), container);
  write_json(paths.truth(), {{"domain", io::to_json<Dim>(c.domain)}, {"inclusions", inc}});
  write_json(paths.simulate_timing(), {{"direct_seconds", out.direct_seconds}});
  const auto material = material_with_inclusions(mesh, c.lambda0, c.mu0, c.inclusion_list());
  io::write_atomic(paths.material_vtk(), io::vtk_mesh<Dim>(mesh, nullptr, &material));
  log << "simulate: " << out.measurement.size() << "x" << out.measurement.size() << " measurement, |Λ|max "
      << spectral_norm(out.measurement.entries) << ", data error bound " << out.data_error_bound << ", "
      << out.direct_seconds << " s\n";
  return out;
}

struct OfflineOutput {
  std::vector<OperatorMatrix> operators;
  bool skipped = false;
  double offline_seconds = 0.0;
};

/// Operators for every test cube without touching the bank file.
template <int Dim>
std::vector<OperatorMatrix> compute_operator_bank(const ExperimentConfig<Dim>& c, const Mesh<Dim>& mesh,
                                                  std::ostream* log = nullptr) {
  const auto layout = c.layout();
  const auto grid = c.cubes();
  const Lame k = c.resolved_contrasts();
  std::vector<OperatorMatrix> ops(grid.size());
  if (c.method == Method::Standard) {
    const auto bg = solve_background(mesh, layout, c.lambda0, c.mu0);
    parallel_for(grid.size(), c.workers, [&](std::size_t i) {
      ops[i] = test_operator_standard(mesh, bg, grid.cubes[i], k.lambda, k.mu, c.direction, {}, c.fraction_depth);
    });
  } else {
    const auto bank = build_solution_bank(mesh, c.lambda0, c.mu0, layout, {}, c.workers);
    parallel_for(grid.size(), c.workers, [&](std::size_t i) {
      ops[i] = frechet_matrix(bank, grid.cubes[i], k.lambda, k.mu, c.fraction_depth);
    });
  }
  if (log) *log << "offline: " << ops.size() << " " << to_string(c.method) << " operators\n";
  return ops;
}

template <int Dim>
OfflineOutput cmd_offline(const ExperimentConfig<Dim>& c, std::ostream& log = std::cerr, bool force = false) {
  validate_config(c);
  const ArtifactPaths paths{c.output_dir};
  const auto mesh = build_box_mesh(c.domain, c.offline_resolution, c.dirichlet_face);
  const json provenance = bank_provenance(c, mesh);
  const std::string key = json_key(provenance);
  OfflineOutput out;

  if (!force && std::filesystem::exists(paths.bank(c.method))) {
    try {
      auto existing = io::read_container(paths.bank(c.method));
      if (existing.header.value("bank_key", "") == key) {
        log << "offline: " << paths.bank(c.method).string() << " is up to date, skipping\n";
        out.skipped = true;
        for (auto& a : existing.matrices)
          out.operators.push_back({std::move(a), provenance["load_system_id"].get<std::string>(),
                                   c.method == Method::Standard ? OperatorKind::Difference : OperatorKind::Derivative});
        return out;
      }
    } catch (const ConfigError&) {
      // unreadable bank: rebuild
    }
  }

  Stopwatch sw;
  out.operators = compute_operator_bank(c, mesh, &log);
  out.offline_seconds = sw.seconds();

  io::MatrixContainer container;
  container.header = {{"kind", std::string(to_string(out.operators.empty() ? OperatorKind::Difference
                                                                           : out.operators.front().kind))},
                      {"bank_key", key},
                      {"provenance", provenance}};
  for (const auto& o : out.operators) container.matrices.push_back(o.entries);
  io::write_container(paths.bank(c.method), container);
  io::write_atomic(paths.test_cubes(), io::test_cubes_json(c.cubes()));
  write_json(paths.bank_timing(c.method), {{"bank_key", key}, {"offline_seconds", out.offline_seconds}});

  PhaseTimings t;
  if (std::filesystem::exists(paths.simulate_timing()))
    t.direct_seconds = read_json(paths.simulate_timing()).value("direct_seconds", 0.0);
  t.offline_seconds = out.offline_seconds;
  write_json(paths.timings(c.method), timings_to_json(std::string(to_string(c.method)), t));
  log << "offline: wrote " << paths.bank(c.method).string() << " in " << out.offline_seconds << " s\n";
  return out;
}

struct ReconstructOutput {
  ReconstructionResult result;
  std::string delta_source;
  std::optional<json> score;
  double online_seconds = 0.0;
};

/// Online phase: reads the measurement and the bank, never solves a PDE.
template <int Dim>
ReconstructOutput cmd_reconstruct(const ExperimentConfig<Dim>& c, std::ostream& log = std::cerr,
                                  std::optional<std::filesystem::path> measurement_path = std::nullopt,
                                  std::optional<std::filesystem::path> bank_path = std::nullopt) {
  validate_config(c);
  const ArtifactPaths paths{c.output_dir};
  const auto mpath = measurement_path.value_or(paths.measurement());
  const auto bpath = bank_path.value_or(paths.bank(c.method));
  if (!std::filesystem::exists(mpath)) throw ConfigError(mpath.string() + ": missing (run simulate first)");
  if (!std::filesystem::exists(bpath)) throw ConfigError(bpath.string() + ": missing (run offline first)");

  Stopwatch sw;
  const auto meas_c = io::read_container(mpath);
  auto bank_c = io::read_container(bpath);
  if (meas_c.matrices.size() != 1) throw ConfigError(mpath.string() + ": expected exactly one matrix");

  // Bank must match what this config would build.
  const auto grid = c.cubes();
  const auto offline_mesh = build_box_mesh(c.domain, c.offline_resolution, c.dirichlet_face);
  const json expected = bank_provenance(c, offline_mesh);
  const json stored = bank_c.header.value("provenance", json::object());
  if (auto d = diff_summary(stored, expected); !d.empty()) {
    std::string msg = bpath.string() + " does not match the config:";
    for (const auto& line : d) msg += "\n  " + line;
    throw ConfigError(msg);
  }
  // Measurement and bank must share the load system and background.
  json mexp = {{"load_system_id", expected["load_system_id"]}, {"lambda0", c.lambda0}, {"mu0", c.mu0}};
  if (auto d = diff_summary(meas_c.header, mexp); !d.empty()) {
    std::string msg = mpath.string() + " is incompatible with the bank:";
    for (const auto& line : d) msg += "\n  " + line;
    throw ConfigError(msg);
  }

  OperatorMatrix meas{meas_c.matrices.front(), meas_c.header["load_system_id"].get<std::string>(),
                      operator_kind_from_string(meas_c.header.value("kind", "difference"))};
  const OperatorKind bank_kind = c.method == Method::Standard ? OperatorKind::Difference : OperatorKind::Derivative;
  std::vector<OperatorMatrix> ops;
  ops.reserve(bank_c.matrices.size());
  for (auto& a : bank_c.matrices) ops.push_back({std::move(a), meas.load_system_id, bank_kind});

  ReconstructOutput out;
  double delta = 0.0;
  if (c.delta) {
    delta = *c.delta;
    out.delta_source = "explicit";
  } else if (meas_c.header.contains("data_error_bound")) {
    delta = meas_c.header["data_error_bound"].get<double>();
    out.delta_source = "data-error-bound";
  } else {
    delta = default_delta(meas);
    out.delta_source = "heuristic";
  }

  out.result = c.method == Method::Standard ? standard_test(meas, ops, delta, c.direction, c.workers)
                                            : linearized_test(meas, ops, delta, c.direction, c.workers);
  if (meas_c.header.contains("noise")) {
    out.result.noise.level = meas_c.header["noise"].value("level", 0.0);
    out.result.noise.seed = meas_c.header["noise"].value("seed", std::uint64_t{0});
  }

  json rj = io::result_json<Dim>(out.result, grid.cubes);
  rj["delta_source"] = out.delta_source;
  rj["alpha"] = expected["alpha"];
  rj["beta"] = expected["beta"];
  write_json(paths.result_json(c.method), rj);
  io::write_atomic(paths.result_vtk(c.method), io::vtk_voxels<Dim>(grid.cubes, out.result));
  io::write_atomic(paths.eigen_csv(c.method), io::result_csv<Dim>(out.result, grid.cubes));

  const auto truth_path = mpath.parent_path() / "truth.json";
  if (std::filesystem::exists(truth_path)) {
    const json tj = read_json(truth_path);
    std::vector<Box<Dim>> truth;
    for (std::size_t i = 0; i < tj.at("inclusions").size(); ++i)
      truth.push_back(io::box_from_json<Dim>(tj["inclusions"][i], "truth.inclusions"));
    const auto rep = classify_against_truth(out.result, grid.cubes, truth, c.domain.extent().maxCoeff());
    json fps = json::array();
    for (const auto& fp : rep.false_positives) fps.push_back({{"index", fp.index}, {"distance", fp.distance}});
    json hist = json::object();
    for (const auto& [bin, n] : rep.distance_histogram) hist[std::to_string(bin)] = n;
    out.score = json{{"inside_cubes", rep.inside_cubes},
                     {"flagged_inside", rep.flagged_inside},
                     {"recall_inside", rep.recall_inside},
                     {"flagged_total", out.result.inside_count()},
                     {"false_positives", fps},
                     {"distance_histogram", hist}};
    write_json(paths.score(c.method), *out.score);
  }
  out.online_seconds = sw.seconds();

  PhaseTimings t;
  if (std::filesystem::exists(paths.simulate_timing()))
    t.direct_seconds = read_json(paths.simulate_timing()).value("direct_seconds", 0.0);
  if (std::filesystem::exists(paths.bank_timing(c.method)))
    t.offline_seconds = read_json(paths.bank_timing(c.method)).value("offline_seconds", 0.0);
  t.online_seconds = out.online_seconds;
  write_json(paths.timings(c.method), timings_to_json(std::string(to_string(c.method)), t));

  log << "reconstruct: " << out.result.inside_count() << " of " << grid.size() << " cubes flagged (delta "
      << delta << ", " << out.delta_source << ")";
  if (out.score) log << ", recall " << (*out.score)["recall_inside"].get<double>();
  log << "\n";
  return out;
}

struct ReportOutput {
  std::string text;
  json table;
};

/// Direct / offline / online table, one row per timing file.
inline ReportOutput cmd_report(const std::vector<std::filesystem::path>& timing_paths) {
  if (timing_paths.empty()) throw ConfigError("report: at least one timings file is required");
  ReportOutput out;
  out.table = json::array();
  std::ostringstream os;
  auto cell = [](const std::optional<double>& x) {
    if (!x) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << *x;
    return s.str();
  };
  os << std::left << std::setw(12) << "method" << std::right << std::setw(14) << "direct [s]" << std::setw(14)
     << "offline [s]" << std::setw(14) << "online [s]" << "\n";
  for (const auto& p : timing_paths) {
    const json j = read_json(p);
    const auto t = timings_from_json(j);
    const std::string method = j.value("method", p.stem().string());
    out.table.push_back(timings_to_json(method, t));
    os << std::left << std::setw(12) << method << std::right << std::setw(14) << cell(t.direct_seconds)
       << std::setw(14) << cell(t.offline_seconds) << std::setw(14) << cell(t.online_seconds) << "\n";
  }
  out.text = os.str();
  return out;
}

}  // namespace elmono
