// Command-line driver: simulate, offline, reconstruct, report, verify.

#include "elmono/elmono.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<double> delta;
  std::optional<double> noise;
};

template <int Dim>
elmono::ExperimentConfig<Dim> load(const Overrides& o) {
  auto c = elmono::load_config<Dim>(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) c.noise.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.delta) c.delta = *o.delta;
  if (o.noise) c.noise.level = *o.noise;
  elmono::validate_config(c);
  return c;
}

int dimension_of(const std::string& path) {
  try {
    return elmono::config_dimension(nlohmann::json::parse(elmono::io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw elmono::ConfigError(path + ": " + e.what());
  }
}

template <int Dim>
void run(const std::string& command, const Overrides& o, bool force, const std::string& measurement,
         const std::string& bank) {
  const auto c = load<Dim>(o);
  if (command == "simulate" || command == "run") elmono::cmd_simulate(c, std::cerr);
  if (command == "offline" || command == "run") elmono::cmd_offline(c, std::cerr, force);
  if (command == "reconstruct" || command == "run") {
    std::optional<std::filesystem::path> mp, bp;
    if (!measurement.empty()) mp = measurement;
    if (!bank.empty()) bp = bank;
    elmono::cmd_reconstruct(c, std::cerr, mp, bp);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monotonicity-based inclusion detection for linear elasticity"};
  app.require_subcommand(1);
  Overrides o;
  bool force = false;
  std::string measurement, bank;
  std::vector<std::string> timing_files;
  unsigned verify_workers = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (overrides the config)");
    sub->add_option("--seed", o.seed, "Noise seed");
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* simulate = app.add_subcommand("simulate", "Simulate the difference measurement");
  add_common(simulate);
  simulate->add_option("--noise", o.noise, "Relative noise level")->check(CLI::NonNegativeNumber);

  auto* offline = app.add_subcommand("offline", "Build the test-operator bank");
  add_common(offline);
  offline->add_flag("--force", force, "Rebuild even if the bank is up to date");

  auto* reconstruct = app.add_subcommand("reconstruct", "Run the monotonicity test");
  add_common(reconstruct);
  reconstruct->add_option("--delta", o.delta, "Noise shift delta (default: automatic)")
      ->check(CLI::NonNegativeNumber);
  reconstruct->add_option("--measurement", measurement, "Measurement file (default: <out>/measurement.elmat)");
  reconstruct->add_option("--bank", bank, "Bank file (default: <out>/bank_<method>.elmat)");

  auto* all = app.add_subcommand("run", "simulate, offline and reconstruct in sequence");
  add_common(all);
  all->add_option("--noise", o.noise, "Relative noise level")->check(CLI::NonNegativeNumber);
  all->add_option("--delta", o.delta, "Noise shift delta")->check(CLI::NonNegativeNumber);

  auto* report = app.add_subcommand("report", "Tabulate phase timings");
  report->add_option("timings", timing_files, "timings_<method>.json files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", o.out, "Also write report.txt and report.json here");

  auto* verify = app.add_subcommand("verify", "Run the property checks on a coarse mesh");
  verify->add_option("--workers", verify_workers, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*report) {
      std::vector<std::filesystem::path> paths(timing_files.begin(), timing_files.end());
      const auto r = elmono::cmd_report(paths);
      std::cout << r.text;
      if (!o.out.empty()) {
        elmono::io::write_atomic(std::filesystem::path(o.out) / "report.txt", r.text);
        elmono::write_json(std::filesystem::path(o.out) / "report.json", r.table);
      }
      return 0;
    }
    if (*verify) {
      bool ok = true;
      for (const auto& c : elmono::verify::coarse_suite(verify_workers)) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
        ok = ok && c.passed;
      }
      return ok ? 0 : kExitNumerical;
    }
    std::string command = app.get_subcommands().front()->get_name();
    if (dimension_of(o.config) == 2)
      run<2>(command, o, force, measurement, bank);
    else
      run<3>(command, o, force, measurement, bank);
  } catch (const elmono::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const elmono::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const elmono::SolverError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
