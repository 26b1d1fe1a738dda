// proxgen <experiment> --config <path> [--jobs N] [--seed S ...] [--out DIR]
//
// Exit codes: 0 all cells ok, 2 some cells diverged or failed, 1 bad configuration.

#include "proxgen/experiments.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

void write_config_echo(const proxgen::ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : proxgen::resolved_settings(cfg)) j[k] = v;
  const std::string path = cfg.output_dir + "/config.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic proximal-gradient experiments"};
  std::string experiment;
  std::string config_path;
  unsigned jobs = 1;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  bool quiet = false;
  app.add_option("experiment", experiment, "lasso-recovery | sparse-mlp | quant-mlp | prox-fuzz")->required();
  app.add_option("--config", config_path, "key = value config file")->required();
  app.add_option("--jobs", jobs, "grid cells run in parallel")->check(CLI::PositiveNumber);
  app.add_option("--seed", seeds, "override the seeds list");
  app.add_option("--out", out_dir, "override output_dir");
  app.add_flag("-q,--quiet", quiet, "no per-cell progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  proxgen::ExperimentConfig cfg;
  try {
    cfg = proxgen::load_config(experiment, config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();
  } catch (const proxgen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  try {
    std::filesystem::create_directories(cfg.output_dir);
    write_config_echo(cfg);
    std::function<void(const std::string&)> log;
    if (!quiet) log = [](const std::string& s) { std::cerr << s << '\n'; };
    const auto outcome = proxgen::run_experiment(cfg, jobs, log);
    if (cfg.experiment == "prox-fuzz") {
      for (const auto& f : outcome.fuzz)
        if (f.errors > 0 || f.dead_zone_nonzero > 0 || f.max_gap > 1e-8) {
          std::cerr << f.op << " q=" << proxgen::exponent_name(f.q) << " outside tolerance\n";
          return 2;
        }
      return 0;
    }
    if (outcome.failed_cells > 0) {
      std::cerr << outcome.failed_cells << " of " << outcome.cells.size() << " cells did not finish ok\n";
      return 2;
    }
  } catch (const proxgen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
