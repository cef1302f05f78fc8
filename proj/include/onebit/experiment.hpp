#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "onebit/config.hpp"
#include "onebit/feedback_stats.hpp"
#include "onebit/parallel.hpp"
#include "onebit/simulator.hpp"
#include "onebit/threshold_opt.hpp"

namespace onebit {

/// Formats a number with 12 significant digits.
inline std::string fmt_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Ordering as 1-based user ids joined by '-', e.g. "2-1-3".
inline std::string fmt_ordering(const Ordering& ordering) {
  std::string out;
  for (auto u : ordering) out += (out.empty() ? "" : "-") + std::to_string(u + 1);
  return out;
}

/// Minimal CSV writer: comma separator, '\n' line endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw std::logic_error("CsvWriter: wrong field count");
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::size_t columns_;
  std::ostringstream out_;
};

inline std::vector<std::string> numbered(const std::string& prefix, std::size_t m) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= m; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// optimize

struct OptimizePointResult {
  double snr_db = 0.0;
  OptimizeResult result;
  std::optional<TwoUserSolution> two_user;
};

inline void check_brute_force_size(const ExperimentConfig& cfg, StrategyKind strategy) {
  if (strategy == StrategyKind::brute && cfg.users.size() > kMaxBruteForceUsers) {
    throw ConfigError(cfg.source + ":0: brute-force region search supports at most " +
                      std::to_string(kMaxBruteForceUsers) + " users (config has " +
                      std::to_string(cfg.users.size()) + ")");
  }
}

/// Optimizes thresholds at every experiment point; points run on up to `workers` threads.
inline std::vector<OptimizePointResult> run_optimize(const ExperimentConfig& cfg, std::size_t workers) {
  check_brute_force_size(cfg, cfg.strategy);
  const auto points = experiment_points(cfg);
  std::vector<OptimizePointResult> out(points.size());
  const auto strategy = region_strategy(cfg.strategy, cfg.seed);
  parallel_for(points.size(), workers, [&](std::size_t k) {
    out[k].snr_db = points[k].snr_db;
    out[k].result = optimize(points[k].users, strategy, cfg.solver);
    if (points[k].users.size() == 2) out[k].two_user = optimize_two_user(points[k].users, cfg.solver);
  });
  return out;
}

inline std::string thresholds_csv(const std::vector<OptimizePointResult>& rows, std::size_t m) {
  std::vector<std::string> header{"snr_db"};
  for (auto& c : numbered("r_", m)) header.push_back(c);
  for (const char* c : {"phi_analytic", "region", "phi_raw", "phi_polished", "phi_gap"}) header.emplace_back(c);
  CsvWriter csv(header);
  for (const auto& row : rows) {
    const auto& best = row.result.best;
    std::vector<std::string> f{fmt_number(row.snr_db)};
    for (double r : best.polished.thresholds) f.push_back(fmt_number(r));
    f.push_back(fmt_number(best.polished.phi));
    f.push_back(fmt_ordering(best.polished.ordering));
    f.push_back(fmt_number(best.raw.phi));
    f.push_back(fmt_number(best.polished.phi));
    f.push_back(fmt_number(best.polish_gain()));
    csv.row(f);
  }
  return csv.str();
}

inline std::string optimize_summary(const std::vector<OptimizePointResult>& rows) {
  std::ostringstream out;
  for (const auto& row : rows) {
    const auto& best = row.result.best;
    out << "snr " << fmt_number(row.snr_db) << " dB: phi " << fmt_number(best.polished.phi) << " in region "
        << fmt_ordering(best.polished.ordering) << ", thresholds";
    for (double r : best.polished.thresholds) out << ' ' << fmt_number(r);
    out << " (raw phi " << fmt_number(best.raw.phi) << ")\n";
    if (row.two_user) {
      for (const auto* peak : {&row.two_user->peak_a, &row.two_user->peak_b}) {
        out << "  peak " << fmt_ordering(peak->assignment.ordering) << ": phi "
            << fmt_number(peak->assignment.phi) << ", thresholds " << fmt_number(peak->assignment.thresholds[0])
            << ' ' << fmt_number(peak->assignment.thresholds[1])
            << (peak->verified() ? "" : " [region or stationarity check failed]") << '\n';
      }
    }
    for (const auto& w : row.result.warnings) out << "  warning: " << w << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulatePointResult {
  double snr_db = 0.0;
  std::vector<double> thresholds;
  double phi_analytic = 0.0;
  double phi_no_feedback = 0.0;  // best single user served every block
  SimReport report;
};

/// Thresholds per point as read from a thresholds CSV.
using ThresholdTable = std::vector<std::pair<double, std::vector<double>>>;

inline ThresholdTable read_thresholds_csv(std::istream& in, std::size_t m, const std::string& source) {
  auto fail = [&](std::size_t line, const std::string& msg) {
    return ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  };
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(detail::trim(field));
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw fail(1, "empty thresholds file");
  const auto header = split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  std::vector<std::string> wanted{"snr_db"};
  for (auto& c : numbered("r_", m)) wanted.push_back(c);
  for (const auto& w : wanted) {
    if (!col.count(w)) throw fail(1, "missing column '" + w + "'");
  }
  ThresholdTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = split(line);
    std::vector<double> values;
    for (const auto& w : wanted) {
      const auto idx = col[w];
      if (idx >= fields.size()) throw fail(line_no, "missing field '" + w + "'");
      char* end = nullptr;
      const double v = std::strtod(fields[idx].c_str(), &end);
      if (end == fields[idx].c_str() || *end != '\0') throw fail(line_no, "bad number in '" + w + "'");
      values.push_back(v);
    }
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (!(values[i] >= 0.0)) throw fail(line_no, "negative threshold");
    }
    table.push_back({values[0], std::vector<double>(values.begin() + 1, values.end())});
  }
  return table;
}

inline ThresholdTable load_thresholds_csv(const std::string& path, std::size_t m) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ":0: cannot open thresholds file");
  return read_thresholds_csv(in, m, path);
}

/// Simulates every experiment point at the given thresholds, or optimizes them first when none are given.
inline std::vector<SimulatePointResult> run_simulate(const ExperimentConfig& cfg, std::size_t workers,
                                                     const std::optional<ThresholdTable>& given = std::nullopt) {
  const auto points = experiment_points(cfg);
  if (given && given->size() != points.size()) {
    throw ConfigError("thresholds file has " + std::to_string(given->size()) + " rows but the experiment has " +
                      std::to_string(points.size()) + " points");
  }
  if (given) {
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (std::abs((*given)[k].first - points[k].snr_db) > 1e-9) {
        throw ConfigError("thresholds file row " + std::to_string(k + 1) + " has snr_db " +
                          fmt_number((*given)[k].first) + ", expected " + fmt_number(points[k].snr_db));
      }
    }
  } else {
    check_brute_force_size(cfg, cfg.strategy);
  }
  const auto strategy = region_strategy(cfg.strategy, cfg.seed);
  std::vector<SimulatePointResult> out(points.size());
  parallel_for(points.size(), workers, [&](std::size_t k) {
    const auto& users = points[k].users;
    auto& row = out[k];
    row.snr_db = points[k].snr_db;
    row.thresholds = given ? (*given)[k].second : optimize(users, strategy, cfg.solver).best.polished.thresholds;
    row.phi_analytic = weighted_sum_rate(users, row.thresholds);
    for (const auto& u : users) row.phi_no_feedback = std::max(row.phi_no_feedback, u.weight * u.dist->mean());
    row.report = simulate({cfg.n_blocks, cfg.seed, users, row.thresholds});
  });
  return out;
}

inline std::string simulation_csv(const std::vector<SimulatePointResult>& rows, std::size_t m) {
  std::vector<std::string> header{"snr_db",       "phi_analytic", "phi_mc", "phi_mc_stderr", "phi_full_csi",
                                  "phi_full_csi_stderr"};
  for (auto& c : numbered("rate_", m)) header.push_back(c);
  for (auto& c : numbered("frac_", m)) header.push_back(c);
  header.emplace_back("phi_no_feedback");
  CsvWriter csv(header);
  for (const auto& row : rows) {
    const auto& rep = row.report;
    std::vector<std::string> f{fmt_number(row.snr_db),         fmt_number(row.phi_analytic),
                               fmt_number(rep.one_bit.mean),   fmt_number(rep.one_bit.std_error),
                               fmt_number(rep.full_csi.mean),  fmt_number(rep.full_csi.std_error)};
    for (const auto& e : rep.per_user_rate) f.push_back(fmt_number(e.mean));
    for (double p : rep.scheduling_fraction) f.push_back(fmt_number(p));
    f.push_back(fmt_number(row.phi_no_feedback));
    csv.row(f);
  }
  return csv.str();
}

// ---------------------------------------------------------------------------
// compare-peaks

struct PeakComparison {
  double snr_db = 0.0;
  double phi_bruteforce = 0.0;
  double phi_random = 0.0;
  double phi_heuristic = 0.0;
  double worst_phi_random = 0.0;  // over cfg.random_draws seeds starting at cfg.seed

  static double loss_percent(double best, double phi) { return best > 0.0 ? 100.0 * (1.0 - phi / best) : 0.0; }
};

/// Solves every region once per point, then reads the random and heuristic
/// choices out of that table.
inline std::vector<PeakComparison> run_compare_peaks(const ExperimentConfig& cfg, std::size_t workers) {
  check_brute_force_size(cfg, StrategyKind::brute);
  const auto points = experiment_points(cfg);
  std::vector<PeakComparison> out(points.size());
  parallel_for(points.size(), workers, [&](std::size_t k) {
    const auto& users = points[k].users;
    const auto all = optimize(users, BruteForce{}, cfg.solver);
    std::map<Ordering, double> phi_of;
    for (const auto& region : all.regions) phi_of[region.raw.ordering] = region.polished.phi;
    auto lookup = [&](const RegionStrategy& s) {
      const auto order = select_regions(users, s).front();
      if (auto it = phi_of.find(order); it != phi_of.end()) return it->second;
      return optimize_m_user_region(users, order, cfg.solver).polished.phi;
    };
    auto& row = out[k];
    row.snr_db = points[k].snr_db;
    row.phi_bruteforce = all.best.polished.phi;
    row.phi_random = lookup(RandomRegion{cfg.seed});
    row.phi_heuristic = lookup(Heuristic{});
    row.worst_phi_random = row.phi_random;
    for (std::size_t d = 0; d < cfg.random_draws; ++d) {
      row.worst_phi_random = std::min(row.worst_phi_random, lookup(RandomRegion{cfg.seed + d}));
    }
  });
  return out;
}

inline std::string peaks_csv(const std::vector<PeakComparison>& rows) {
  CsvWriter csv({"snr_db", "phi_bruteforce", "phi_random", "phi_heuristic", "loss_random_percent",
                 "loss_heuristic_percent", "worst_phi_random", "worst_loss_random_percent"});
  for (const auto& r : rows) {
    csv.row({fmt_number(r.snr_db), fmt_number(r.phi_bruteforce), fmt_number(r.phi_random),
             fmt_number(r.phi_heuristic), fmt_number(PeakComparison::loss_percent(r.phi_bruteforce, r.phi_random)),
             fmt_number(PeakComparison::loss_percent(r.phi_bruteforce, r.phi_heuristic)),
             fmt_number(r.worst_phi_random),
             fmt_number(PeakComparison::loss_percent(r.phi_bruteforce, r.worst_phi_random))});
  }
  return csv.str();
}

/// Plain-text record of the settings behind a run.
inline std::string run_metadata(const ExperimentConfig& cfg, const std::string& command) {
  std::ostringstream out;
  out << "command = " << command << '\n';
  out << "config = " << cfg.source << '\n';
  out << "users = " << cfg.users.size() << '\n';
  for (std::size_t i = 0; i < cfg.users.size(); ++i) {
    out << "user_" << i + 1 << " = weight " << fmt_number(cfg.users[i].weight) << ", avg_snr_db "
        << (cfg.users[i].avg_snr_db ? fmt_number(*cfg.users[i].avg_snr_db) : std::string("sweep")) << '\n';
  }
  if (cfg.sweep) {
    out << "snr_db_sweep = " << fmt_number(cfg.sweep->start_db) << ":" << fmt_number(cfg.sweep->step_db) << ":"
        << fmt_number(cfg.sweep->stop_db) << '\n';
  }
  out << "n_blocks = " << cfg.n_blocks << '\n';
  out << "seed = " << cfg.seed << '\n';
  out << "strategy = " << strategy_name(cfg.strategy) << '\n';
  out << "recursion = " << (cfg.solver.recursion == RecursionForm::as_printed ? "as_printed" : "complement") << '\n';
  if (cfg.source == "<default>") {
    out << "note = SNR range 0..20 dB and n_blocks 1e6 are defaults chosen by this tool\n";
  }
  return out.str();
}

}  // namespace onebit
