#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "onebit/distributions.hpp"
#include "onebit/threshold_opt.hpp"

namespace onebit {

/// Invalid or unreadable experiment configuration. what() is "source:line: message".
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UserSpec {
  double weight = 1.0;
  std::optional<double> avg_snr_db;  // unset: follows the SNR sweep
  std::size_t line = 0;
};

struct SnrSweep {
  double start_db = 0.0;
  double stop_db = 20.0;
  double step_db = 2.0;
};

enum class StrategyKind { brute, random, heuristic };

struct ExperimentConfig {
  std::vector<UserSpec> users;
  std::optional<SnrSweep> sweep;
  std::size_t n_blocks = 1'000'000;
  std::uint64_t seed = 1;
  StrategyKind strategy = StrategyKind::brute;
  std::size_t random_draws = 20;
  SolverConfig solver;
  std::string source = "<default>";
};

inline std::string_view strategy_name(StrategyKind s) {
  switch (s) {
    case StrategyKind::brute: return "brute";
    case StrategyKind::random: return "random";
    case StrategyKind::heuristic: return "heuristic";
  }
  return "?";
}

inline std::optional<StrategyKind> parse_strategy(std::string_view name) {
  if (name == "brute") return StrategyKind::brute;
  if (name == "random") return StrategyKind::random;
  if (name == "heuristic") return StrategyKind::heuristic;
  return std::nullopt;
}

inline RegionStrategy region_strategy(StrategyKind kind, std::uint64_t seed) {
  switch (kind) {
    case StrategyKind::brute: return BruteForce{};
    case StrategyKind::random: return RandomRegion{seed};
    case StrategyKind::heuristic: return Heuristic{};
  }
  return BruteForce{};
}

/// Five users with weights 1.1, 1.05, 1, 0.95, 0.9 sharing an SNR swept
/// 0..20 dB in 2 dB steps, 10^6 blocks per point.
inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  for (double w : {1.1, 1.05, 1.0, 0.95, 0.9}) cfg.users.push_back({w, std::nullopt, 0});
  cfg.sweep = SnrSweep{};
  return cfg;
}

/// SNR values of the sweep, computed as start + k * step (inclusive of stop).
inline std::vector<double> sweep_points(const SnrSweep& s) {
  std::vector<double> out;
  for (std::size_t k = 0;; ++k) {
    const double v = s.start_db + static_cast<double>(k) * s.step_db;
    if (v > s.stop_db + 1e-9 * std::max(1.0, std::abs(s.step_db))) break;
    out.push_back(v);
  }
  return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace detail

/// Parses the key-value experiment format:
///
///   # comment
///   seed = 7
///   snr_db_start = 0
///   [[user]]
///   weight = 1.1
///   avg_snr_db = 10      # optional
///
/// Top-level keys must precede the first [[user]] section.
inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  cfg.source = source;
  auto fail = [&](std::size_t line, const std::string& msg) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  };

  std::map<std::string, std::size_t> top_seen;
  std::map<std::string, std::size_t> user_seen;
  std::optional<double> start, stop, step;
  std::size_t sweep_line = 0;
  bool in_user = false;

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line != "[[user]]") throw fail(line_no, "unknown section '" + line + "' (expected [[user]])");
      cfg.users.push_back({1.0, std::nullopt, line_no});
      user_seen.clear();
      in_user = true;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail(line_no, "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::unquote(detail::trim(std::string_view(line).substr(eq + 1)));
    if (key.empty()) throw fail(line_no, "missing key before '='");
    if (value.empty()) throw fail(line_no, "missing value for '" + key + "'");

    auto number = [&]() {
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (end == value.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
        throw fail(line_no, "'" + key + "' expects a number, got '" + value + "'");
      }
      return v;
    };
    auto count = [&](bool allow_zero) -> std::uint64_t {
      if (value.find_first_not_of("0123456789") != std::string::npos) {
        throw fail(line_no, "'" + key + "' expects a non-negative integer, got '" + value + "'");
      }
      errno = 0;
      const auto v = std::strtoull(value.c_str(), nullptr, 10);
      if (errno == ERANGE) throw fail(line_no, "'" + key + "' is out of range");
      if (!allow_zero && v == 0) throw fail(line_no, "'" + key + "' must be >= 1");
      return v;
    };
    auto positive = [&]() {
      const double v = number();
      if (!(v > 0.0)) throw fail(line_no, "'" + key + "' must be positive");
      return v;
    };

    auto& seen = in_user ? user_seen : top_seen;
    if (auto it = seen.find(key); it != seen.end()) {
      throw fail(line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen[key] = line_no;

    if (in_user) {
      auto& u = cfg.users.back();
      if (key == "weight") u.weight = positive();
      else if (key == "avg_snr_db") u.avg_snr_db = number();
      else throw fail(line_no, "unknown user key '" + key + "' (expected weight or avg_snr_db)");
      continue;
    }

    if (key == "n_blocks") cfg.n_blocks = count(false);
    else if (key == "seed") cfg.seed = count(true);
    else if (key == "random_draws") cfg.random_draws = count(false);
    else if (key == "strategy") {
      auto s = parse_strategy(value);
      if (!s) throw fail(line_no, "unknown strategy '" + value + "' (expected brute, random or heuristic)");
      cfg.strategy = *s;
    } else if (key == "snr_db_start" || key == "snr_db_stop" || key == "snr_db_step") {
      auto& slot = key == "snr_db_start" ? start : key == "snr_db_stop" ? stop : step;
      slot = number();
      sweep_line = line_no;
    } else if (key == "fixed_point_tol") cfg.solver.fixed_point_tol = positive();
    else if (key == "bisection_tol") cfg.solver.bisection_tol = positive();
    else if (key == "fd_step") cfg.solver.fd_step = positive();
    else if (key == "max_iters") cfg.solver.max_iters = count(false);
    else if (key == "damping") {
      const double d = number();
      if (!(d > 0.0 && d <= 1.0)) throw fail(line_no, "'damping' must lie in (0, 1]");
      cfg.solver.damping = d;
    } else if (key == "recursion") {
      if (value == "as_printed") cfg.solver.recursion = RecursionForm::as_printed;
      else if (value == "complement") cfg.solver.recursion = RecursionForm::complement;
      else throw fail(line_no, "unknown recursion '" + value + "' (expected as_printed or complement)");
    } else {
      throw fail(line_no, "unknown key '" + key + "'");
    }
  }

  if (start || stop || step) {
    if (!(start && stop && step)) {
      throw fail(sweep_line, "SNR sweep needs all of snr_db_start, snr_db_stop and snr_db_step");
    }
    if (!(*step > 0.0)) throw fail(top_seen["snr_db_step"], "'snr_db_step' must be positive");
    if (*start > *stop) throw fail(top_seen["snr_db_stop"], "'snr_db_stop' is below 'snr_db_start'");
    cfg.sweep = SnrSweep{*start, *stop, *step};
  }
  if (cfg.users.empty()) throw fail(line_no, "no [[user]] sections");
  if (!cfg.sweep) {
    for (const auto& u : cfg.users) {
      if (!u.avg_snr_db) throw fail(u.line, "user has no avg_snr_db and no SNR sweep is configured");
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ":0: cannot open config file");
  return parse_config(in, path);
}

/// One evaluation point: the sweep SNR (or the mean per-user SNR without a sweep) and the users there.
struct ExperimentPoint {
  double snr_db = 0.0;
  std::vector<UserProfile> users;
};

inline std::vector<ExperimentPoint> experiment_points(const ExperimentConfig& cfg) {
  std::vector<ExperimentPoint> out;
  auto users_at = [&](double common_db) {
    std::vector<UserProfile> users;
    for (const auto& u : cfg.users) users.push_back(rayleigh_user(u.weight, u.avg_snr_db.value_or(common_db)));
    return users;
  };
  if (cfg.sweep) {
    for (double db : sweep_points(*cfg.sweep)) out.push_back({db, users_at(db)});
  } else {
    double sum = 0.0;
    for (const auto& u : cfg.users) sum += *u.avg_snr_db;
    out.push_back({sum / static_cast<double>(cfg.users.size()), users_at(0.0)});
  }
  return out;
}

}  // namespace onebit
