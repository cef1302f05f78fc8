// Batch runner for threshold optimization, Monte-Carlo simulation and
// region-strategy comparison. Writes CSV files into --out.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "onebit/config.hpp"
#include "onebit/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kSolverError = 3 };

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> blocks;
  std::string strategy;
  std::string thresholds_path;
};

onebit::ExperimentConfig resolve(const Options& opt) {
  auto cfg = opt.config_path.empty() ? onebit::default_config() : onebit::load_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.blocks) {
    if (*opt.blocks == 0) throw onebit::ConfigError("--blocks: must be >= 1");
    cfg.n_blocks = *opt.blocks;
  }
  if (!opt.strategy.empty()) cfg.strategy = *onebit::parse_strategy(opt.strategy);
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config_path, "Experiment config file (default: built-in 5-user sweep)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--seed", opt.seed, "Random seed (overrides config)");
  cmd->add_option("--blocks", opt.blocks, "Monte-Carlo blocks per point (overrides config)");
  cmd->add_option("--strategy", opt.strategy, "Region strategy (overrides config)")
      ->check(CLI::IsMember({"brute", "random", "heuristic"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-bit feedback threshold optimizer and scheduler simulator"};
  app.require_subcommand(1);
  Options opt;

  auto* optimize_cmd = app.add_subcommand("optimize", "Optimize thresholds; writes thresholds.csv");
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte-Carlo simulation; writes simulation.csv");
  auto* compare_cmd = app.add_subcommand("compare-peaks", "Compare region strategies; writes peaks.csv");
  auto* sweep_cmd = app.add_subcommand("sweep", "Optimize and simulate; writes thresholds.csv and simulation.csv");
  for (auto* cmd : {optimize_cmd, simulate_cmd, compare_cmd, sweep_cmd}) add_common(cmd, opt);
  simulate_cmd->add_option("--thresholds", opt.thresholds_path, "thresholds.csv from a previous optimize run")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  const std::size_t workers = onebit::worker_count_from_env();
  try {
    const auto cfg = resolve(opt);
    const std::filesystem::path out(opt.out_dir);
    std::filesystem::create_directories(out);
    const std::size_t m = cfg.users.size();
    const std::string command = app.get_subcommands().front()->get_name();
    write_file(out / "metadata.txt", onebit::run_metadata(cfg, command));

    if (command == "optimize") {
      const auto rows = onebit::run_optimize(cfg, workers);
      write_file(out / "thresholds.csv", onebit::thresholds_csv(rows, m));
      std::cout << onebit::optimize_summary(rows);
    } else if (command == "simulate") {
      std::optional<onebit::ThresholdTable> table;
      if (!opt.thresholds_path.empty()) table = onebit::load_thresholds_csv(opt.thresholds_path, m);
      const auto rows = onebit::run_simulate(cfg, workers, table);
      write_file(out / "simulation.csv", onebit::simulation_csv(rows, m));
      for (const auto& r : rows) {
        std::cout << "snr " << onebit::fmt_number(r.snr_db) << " dB: one-bit " << onebit::fmt_number(r.report.one_bit.mean)
                  << " (analytic " << onebit::fmt_number(r.phi_analytic) << "), full CSI "
                  << onebit::fmt_number(r.report.full_csi.mean) << '\n';
      }
    } else if (command == "compare-peaks") {
      const auto rows = onebit::run_compare_peaks(cfg, workers);
      write_file(out / "peaks.csv", onebit::peaks_csv(rows));
      for (const auto& r : rows) {
        std::cout << "snr " << onebit::fmt_number(r.snr_db) << " dB: brute " << onebit::fmt_number(r.phi_bruteforce)
                  << ", worst random loss "
                  << onebit::fmt_number(onebit::PeakComparison::loss_percent(r.phi_bruteforce, r.worst_phi_random))
                  << "%\n";
      }
    } else {
      const auto opt_rows = onebit::run_optimize(cfg, workers);
      write_file(out / "thresholds.csv", onebit::thresholds_csv(opt_rows, m));
      onebit::ThresholdTable table;
      for (const auto& r : opt_rows) table.push_back({r.snr_db, r.result.best.polished.thresholds});
      const auto sim_rows = onebit::run_simulate(cfg, workers, table);
      write_file(out / "simulation.csv", onebit::simulation_csv(sim_rows, m));
      std::cout << onebit::optimize_summary(opt_rows);
    }
  } catch (const onebit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const onebit::SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kSolverError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
