#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "onebit/distributions.hpp"
#include "onebit/feedback_stats.hpp"
#include "onebit/parallel.hpp"
#include "onebit/random.hpp"

namespace onebit {

/// How the multi-user stationarity recursion combines the next user's terms.
///
/// `as_printed` uses R^+ (1 + F) and a (1 + prod F) denominator. `complement`
/// uses (1 - F) in both places, which is what differentiating the
/// priority-chain objective yields. The two coincide for two users.
enum class RecursionForm { as_printed, complement };

struct SolverConfig {
  double fixed_point_tol = 1e-8;
  std::size_t max_iters = 1000;
  double damping = 0.5;
  double bisection_tol = 1e-9;
  double fd_step = 1e-5;
  RecursionForm recursion = RecursionForm::as_printed;

  void validate() const {
    if (!(fixed_point_tol > 0.0) || !(bisection_tol > 0.0) || !(fd_step > 0.0)) {
      throw std::invalid_argument("SolverConfig: tolerances must be positive");
    }
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("SolverConfig: damping must lie in (0, 1]");
    if (max_iters == 0) throw std::invalid_argument("SolverConfig: max_iters must be positive");
  }
};

struct BruteForce {};
struct RandomRegion {
  std::uint64_t seed = 0;
};
struct Heuristic {};
using RegionStrategy = std::variant<BruteForce, RandomRegion, Heuristic>;

inline constexpr std::size_t kMaxBruteForceUsers = 8;

/// Thresholds are searched in [0, r_max] with F(r_max) > 1 - 1e-10.
inline constexpr double kSearchTailMass = 5e-11;

inline double search_upper_bound(const RateDistribution& dist) { return dist.tail_bound(kSearchTailMass); }

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, std::vector<double> last_iterate, double residual)
      : std::runtime_error(what), last_iterate_(std::move(last_iterate)), residual_(residual) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  double residual() const noexcept { return residual_; }

 private:
  std::vector<double> last_iterate_;
  double residual_;
};

struct TwoUserPeak {
  ThresholdAssignment assignment;
  bool region_condition_holds = false;
  std::vector<double> stationarity;
  double fixed_point_residual = 0.0;
  std::size_t iterations = 0;
  bool used_bisection = false;

  double max_stationarity() const {
    double m = 0.0;
    for (double s : stationarity) m = std::max(m, std::abs(s));
    return m;
  }
  bool verified() const { return region_condition_holds && max_stationarity() < 1e-4; }
};

struct TwoUserSolution {
  TwoUserPeak peak_a;  // user 1 has priority
  TwoUserPeak peak_b;  // user 2 has priority
  ThresholdAssignment best;
};

struct RegionSolution {
  ThresholdAssignment raw;       // fixed point of the recursion; ordering is the region searched
  ThresholdAssignment polished;  // after pattern search; ordering is where the thresholds actually sit
  bool raw_in_region = false;
  double fixed_point_residual = 0.0;
  std::size_t iterations = 0;
  bool used_bisection = false;
  std::vector<double> stationarity;  // finite-difference gradient at the polished point

  double polish_gain() const { return polished.phi - raw.phi; }
};

struct OptimizeResult {
  RegionSolution best;
  std::vector<RegionSolution> regions;  // in select_regions order; failed regions omitted
  std::vector<std::string> warnings;
};

struct StationarityReport {
  std::vector<double> finite_difference;
  std::optional<double> analytic_r1;  // two-user closed form for dPhi/dr_1 in the user-1-priority region
};

struct TwoUserConstraintReport {
  double plus_gap = 0.0;           // mu_2 R_2^+ - mu_1 R_1^-
  double gamma2 = 0.0;             // mu_1 F_2 int_0^{r_1} r f_1 - mu_2 F_1 int_0^{r_2} r f_2
  double top_gap = 0.0;            // mu_1 R_1^+ - mu_2 R_2^+
  double concavity_term = 0.0;     // (K_2 - K_1 r_1) f_1'(r_1)
  double weighted_threshold_gap = 0.0;  // mu_1 r_1 - mu_2 r_2

  bool plus_gap_holds() const { return plus_gap > 0.0; }
  bool gamma2_holds() const { return gamma2 > 0.0; }
  bool top_gap_holds() const { return top_gap > 0.0; }
  bool locally_concave() const { return concavity_term <= 0.0; }
  bool all_hold() const { return plus_gap_holds() && gamma2_holds() && top_gap_holds(); }
};

namespace detail {

inline void require_users(std::span<const UserProfile> users, const char* who) {
  if (users.empty()) throw std::invalid_argument(std::string(who) + ": no users");
  for (const auto& u : users) u.validate();
}

inline std::vector<UserProfile> relabel(std::span<const UserProfile> users, std::span<const std::size_t> ordering) {
  std::vector<UserProfile> out;
  out.reserve(ordering.size());
  for (auto u : ordering) out.push_back(users[u]);
  return out;
}

inline std::vector<double> to_user_space(std::span<const double> priority_space, std::span<const std::size_t> ordering) {
  std::vector<double> out(ordering.size());
  for (std::size_t k = 0; k < ordering.size(); ++k) out[ordering[k]] = priority_space[k];
  return out;
}

/// A system r_k = T_k(r) in priority space where T_{M-1} depends on r_0 only
/// and T_k (0 < k < M-1) on r_{k+1} only, so the system collapses to a scalar
/// equation in r_0 by evaluating k = M-1, ..., 1 in turn.
class ChainSystem {
 public:
  virtual ~ChainSystem() = default;
  virtual double component(std::size_t k, std::span<const double> r, std::span<const ConditionalStats> stats) const = 0;
};

struct FixedPoint {
  std::vector<double> r;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool bisection = false;
};

/// Damped Jacobi iteration with a bisection fallback on the collapsed scalar equation.
inline FixedPoint solve_chain(const ChainSystem& sys, std::span<const UserProfile> users, std::vector<double> r,
                              const SolverConfig& cfg) {
  const std::size_t m = users.size();
  std::vector<double> upper(m);
  for (std::size_t k = 0; k < m; ++k) upper[k] = search_upper_bound(*users[k].dist);
  auto clamp_k = [&](std::size_t k, double v) { return std::isfinite(v) ? std::clamp(v, 0.0, upper[k]) : upper[k]; };

  std::vector<ConditionalStats> stats(m);
  auto refresh = [&](std::size_t k) { stats[k] = conditional_means(*users[k].dist, r[k]); };
  for (std::size_t k = 0; k < m; ++k) refresh(k);

  std::vector<double> next(m);
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    residual = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      next[k] = clamp_k(k, sys.component(k, r, stats));
      residual = std::max(residual, std::abs(next[k] - r[k]));
    }
    if (residual < cfg.fixed_point_tol) return {r, residual, it, false};
    for (std::size_t k = 0; k < m; ++k) {
      r[k] = (1.0 - cfg.damping) * r[k] + cfg.damping * next[k];
      refresh(k);
    }
  }

  // Scalar fallback: h(r_0) = r_0 - T_0(chain(r_0)), bracketed by clamping T_0 to [0, upper].
  auto chain = [&](double r0) {
    r[0] = r0;
    refresh(0);
    for (std::size_t k = m - 1; k >= 1; --k) {
      r[k] = clamp_k(k, sys.component(k, r, stats));
      refresh(k);
    }
    return r0 - clamp_k(0, sys.component(0, r, stats));
  };
  double lo = 0.0;
  double hi = upper[0];
  if (chain(lo) > 0.0) hi = lo;
  else if (chain(hi) < 0.0) lo = hi;
  std::size_t it = 0;
  while (hi - lo > cfg.bisection_tol && it < 400) {
    const double mid = 0.5 * (lo + hi);
    (chain(mid) < 0.0 ? lo : hi) = mid;
    ++it;
  }
  const double h = chain(0.5 * (lo + hi));
  residual = std::abs(h);
  for (std::size_t k = 0; k < m; ++k) residual = std::max(residual, std::abs(clamp_k(k, sys.component(k, r, stats)) - r[k]));
  if (!(residual < std::max(1e-6, cfg.fixed_point_tol))) {
    throw SolverError("fixed-point iteration did not converge (residual " + std::to_string(residual) + ")", r,
                      residual);
  }
  return {r, residual, cfg.max_iters + it, true};
}

/// Coupled two-user thresholds in priority space: the top user's threshold is
/// the other's weighted above-mean and vice versa with the below-mean.
class TwoUserSystem final : public ChainSystem {
 public:
  explicit TwoUserSystem(std::span<const double> weights) : mu_(weights.begin(), weights.end()) {}

  double component(std::size_t k, std::span<const double>, std::span<const ConditionalStats> s) const override {
    if (k == 0) return mu_[1] / mu_[0] * s[1].above_mean;
    return mu_[0] / mu_[1] * s[0].below_mean;
  }

 private:
  std::vector<double> mu_;
};

/// Multi-user stationarity recursion in priority space.
class RecursiveSystem final : public ChainSystem {
 public:
  RecursiveSystem(std::span<const double> weights, RecursionForm form)
      : mu_(weights.begin(), weights.end()), sign_(form == RecursionForm::as_printed ? 1.0 : -1.0) {}

  double component(std::size_t k, std::span<const double> r, std::span<const ConditionalStats> s) const override {
    const std::size_t last = mu_.size() - 1;
    if (k == last) return mu_[0] / mu_[last] * s[0].below_mean;
    if (k > 0) return mu_[k + 1] / mu_[k] * successor_term(k + 1, r, s);
    double lower = 1.0;
    for (std::size_t j = 1; j <= last; ++j) lower *= s[j].cdf_at_threshold;
    const double numerator = mu_[1] * successor_term(1, r, s) - mu_[last] * r[last] * lower;
    const double denominator = mu_[0] * (1.0 + sign_ * lower);
    if (denominator <= 1e-300) return std::numeric_limits<double>::infinity();
    return numerator / denominator;
  }

 private:
  // r_j F_j + R_j^+ (1 +/- F_j)
  double successor_term(std::size_t j, std::span<const double> r, std::span<const ConditionalStats> s) const {
    return r[j] * s[j].cdf_at_threshold + s[j].above_mean * (1.0 + sign_ * s[j].cdf_at_threshold);
  }

  std::vector<double> mu_;
  double sign_;
};

inline std::vector<double> medians(std::span<const UserProfile> users) {
  std::vector<double> r;
  for (const auto& u : users) r.push_back(u.dist->median());
  return r;
}

}  // namespace detail

/// dPhi/dr_1 = (K_2 - K_1 r_1) f_1(r_1) for two users in the user-1-priority region.
inline double two_user_analytic_derivative(std::span<const UserProfile> users, std::span<const double> thresholds) {
  if (users.size() != 2 || thresholds.size() != 2) {
    throw std::invalid_argument("two_user_analytic_derivative: exactly two users required");
  }
  const auto& d1 = *users[0].dist;
  const auto& d2 = *users[1].dist;
  const double k2 = users[1].weight * partial_first_moment(d2, thresholds[1], kInfinity, 1e-13);
  const double k1 = users[0].weight * d2.ccdf(thresholds[1]);
  return (k2 - k1 * thresholds[0]) * d1.pdf(thresholds[0]);
}

/// Finite-difference gradient of the objective (central, one-sided at r = 0).
inline StationarityReport stationarity_residual(std::span<const UserProfile> users, std::span<const double> thresholds,
                                                double fd_step = SolverConfig{}.fd_step) {
  if (users.size() != thresholds.size()) throw std::invalid_argument("stationarity_residual: length mismatch");
  StationarityReport report;
  std::vector<double> r(thresholds.begin(), thresholds.end());
  auto stats = conditional_means(users, r);
  const auto w = weights_of(users);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double center = r[i];
    const double lo = std::max(0.0, center - fd_step);
    const double hi = center + fd_step;
    const auto saved = stats[i];
    stats[i] = conditional_means(*users[i].dist, hi);
    const double phi_hi = weighted_sum_rate(stats, w);
    stats[i] = conditional_means(*users[i].dist, lo);
    const double phi_lo = weighted_sum_rate(stats, w);
    stats[i] = saved;
    report.finite_difference.push_back((phi_hi - phi_lo) / (hi - lo));
  }
  if (users.size() == 2) report.analytic_r1 = two_user_analytic_derivative(users, thresholds);
  return report;
}

/// Derivative-free coordinate pattern search on the objective.
///
/// Starts with step 0.25 * max r_max, tries +/- step on each coordinate,
/// accepts only strict improvements, and halves the step after a sweep without
/// improvement until it falls below 1e-6. Thresholds stay inside [0, r_max].
inline ThresholdAssignment direct_maximize(std::span<const UserProfile> users, std::span<const double> init,
                                           const SolverConfig& cfg = {}) {
  (void)cfg;
  detail::require_users(users, "direct_maximize");
  if (init.size() != users.size()) throw std::invalid_argument("direct_maximize: one threshold per user required");
  std::vector<double> upper;
  for (const auto& u : users) upper.push_back(search_upper_bound(*u.dist));
  std::vector<double> r(init.begin(), init.end());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!(r[i] >= 0.0)) throw std::invalid_argument("direct_maximize: initial thresholds must be >= 0");
  }
  const auto w = weights_of(users);
  auto stats = conditional_means(users, r);
  double best = weighted_sum_rate(stats, w);

  double step = 0.25 * *std::max_element(upper.begin(), upper.end());
  constexpr double kMinStep = 1e-6;
  constexpr std::size_t kMaxSweeps = 200000;
  std::size_t sweeps = 0;
  while (step >= kMinStep && sweeps < kMaxSweeps) {
    bool improved = false;
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (double dir : {1.0, -1.0}) {
        const double x = std::clamp(r[i] + dir * step, 0.0, std::max(upper[i], r[i]));
        if (x == r[i]) continue;
        const auto saved = stats[i];
        stats[i] = conditional_means(*users[i].dist, x);
        const double phi = weighted_sum_rate(stats, w);
        if (phi > best) {
          best = phi;
          r[i] = x;
          improved = true;
          break;
        }
        stats[i] = saved;
      }
    }
    ++sweeps;
    if (!improved) step *= 0.5;
  }
  return {r, infer_ordering(stats, w), best};
}

/// Both local peaks of the two-user objective and the better of the two.
inline TwoUserSolution optimize_two_user(std::span<const UserProfile> users, const SolverConfig& cfg = {}) {
  cfg.validate();
  if (users.size() != 2) throw std::invalid_argument("optimize_two_user: exactly two users required");
  detail::require_users(users, "optimize_two_user");

  auto solve = [&](const Ordering& ordering) {
    const auto ranked = detail::relabel(users, ordering);
    const auto w = weights_of(ranked);
    const detail::TwoUserSystem system(w);
    const auto fp = detail::solve_chain(system, ranked, detail::medians(ranked), cfg);

    TwoUserPeak peak;
    peak.assignment.thresholds = detail::to_user_space(fp.r, ordering);
    peak.assignment.ordering = ordering;
    const auto stats = conditional_means(users, peak.assignment.thresholds);
    const auto uw = weights_of(users);
    peak.assignment.phi = weighted_sum_rate(stats, uw);
    peak.region_condition_holds = in_region(stats, uw, ordering);
    peak.stationarity = stationarity_residual(users, peak.assignment.thresholds, cfg.fd_step).finite_difference;
    peak.fixed_point_residual = fp.residual;
    peak.iterations = fp.iterations;
    peak.used_bisection = fp.bisection;
    return peak;
  };

  TwoUserSolution out;
  out.peak_a = solve({0, 1});
  out.peak_b = solve({1, 0});
  out.best = out.peak_b.assignment.phi > out.peak_a.assignment.phi ? out.peak_b.assignment : out.peak_a.assignment;
  return out;
}

/// Thresholds for one priority region from the stationarity recursion,
/// followed by a pattern-search polish that only accepts improvement.
inline RegionSolution optimize_m_user_region(std::span<const UserProfile> users, const Ordering& ordering,
                                             const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::require_users(users, "optimize_m_user_region");
  if (!is_permutation_of_range(ordering, users.size())) {
    throw std::invalid_argument("optimize_m_user_region: ordering is not a permutation of the users");
  }
  const Ordering order(ordering.begin(), ordering.end());
  const auto uw = weights_of(users);
  RegionSolution sol;

  if (users.size() == 1) {
    // The bit carries no information with one user; any threshold is optimal.
    const std::vector<double> r{users[0].dist->median()};
    sol.raw = {r, order, weighted_sum_rate(users, r)};
    sol.polished = sol.raw;
    sol.raw_in_region = true;
    sol.stationarity = {0.0};
    return sol;
  }

  const auto ranked = detail::relabel(users, ordering);
  const auto w = weights_of(ranked);
  const detail::RecursiveSystem system(w, cfg.recursion);
  const auto fp = detail::solve_chain(system, ranked, detail::medians(ranked), cfg);

  sol.raw.thresholds = detail::to_user_space(fp.r, ordering);
  sol.raw.ordering = order;
  const auto raw_stats = conditional_means(users, sol.raw.thresholds);
  sol.raw.phi = weighted_sum_rate(raw_stats, uw);
  sol.raw_in_region = in_region(raw_stats, uw, ordering);
  sol.fixed_point_residual = fp.residual;
  sol.iterations = fp.iterations;
  sol.used_bisection = fp.bisection;

  sol.polished = direct_maximize(users, sol.raw.thresholds, cfg);
  if (!(sol.polished.phi > sol.raw.phi)) {
    sol.polished = sol.raw;
    sol.polished.ordering = infer_ordering(raw_stats, uw);
  }
  sol.stationarity = stationarity_residual(users, sol.polished.thresholds, cfg.fd_step).finite_difference;
  return sol;
}

/// Candidate priority orderings for a region-selection strategy.
inline std::vector<Ordering> select_regions(std::span<const UserProfile> users, const RegionStrategy& strategy) {
  detail::require_users(users, "select_regions");
  const std::size_t m = users.size();
  Ordering identity(m);
  std::iota(identity.begin(), identity.end(), std::size_t{0});

  if (std::holds_alternative<BruteForce>(strategy)) {
    if (m > kMaxBruteForceUsers) {
      throw std::invalid_argument("select_regions: brute force is limited to " + std::to_string(kMaxBruteForceUsers) +
                                  " users (got " + std::to_string(m) + ")");
    }
    std::vector<Ordering> all;
    do {
      all.push_back(identity);
    } while (std::next_permutation(identity.begin(), identity.end()));
    return all;
  }
  if (const auto* random = std::get_if<RandomRegion>(&strategy)) {
    RandomStream rng(random->seed, 0x5e1ec7);
    for (std::size_t i = m; i > 1; --i) std::swap(identity[i - 1], identity[rng.below(i)]);
    return {identity};
  }
  // Threshold-independent score: weight times mean rate, descending.
  std::vector<double> score(m);
  for (std::size_t i = 0; i < m; ++i) score[i] = users[i].weight * users[i].dist->mean();
  std::stable_sort(identity.begin(), identity.end(),
                   [&](std::size_t a, std::size_t b) { return outranks(score[a], a, score[b], b); });
  return {identity};
}

/// Best thresholds over the regions chosen by `strategy`.
///
/// Regions are solved independently on up to `workers` threads; the result does
/// not depend on the worker count. Equal objective values resolve to the region
/// listed first.
inline OptimizeResult optimize(std::span<const UserProfile> users, const RegionStrategy& strategy,
                               const SolverConfig& cfg = {}, std::size_t workers = 1) {
  cfg.validate();
  const auto regions = select_regions(users, strategy);
  std::vector<std::optional<RegionSolution>> solved(regions.size());
  std::vector<std::string> errors(regions.size());
  parallel_for(regions.size(), workers, [&](std::size_t k) {
    try {
      solved[k] = optimize_m_user_region(users, regions[k], cfg);
    } catch (const SolverError& e) {
      errors[k] = e.what();
    }
  });

  OptimizeResult result;
  for (std::size_t k = 0; k < regions.size(); ++k) {
    if (!solved[k]) {
      std::string name;
      for (auto u : regions[k]) name += (name.empty() ? "" : "-") + std::to_string(u + 1);
      result.warnings.push_back("region " + name + " skipped: " + errors[k]);
      continue;
    }
    result.regions.push_back(std::move(*solved[k]));
  }
  if (result.regions.empty()) {
    throw SolverError("optimize: no region converged" + (errors.empty() ? "" : ": " + errors.front()), {}, 0.0);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < result.regions.size(); ++k) {
    if (result.regions[k].polished.phi > result.regions[best].polished.phi) best = k;
  }
  result.best = result.regions[best];
  return result;
}

/// Two-user feasibility and concavity diagnostics for the user-1-priority region.
inline TwoUserConstraintReport verify_two_user_constraints(std::span<const UserProfile> users,
                                                           std::span<const double> thresholds) {
  if (users.size() != 2 || thresholds.size() != 2) {
    throw std::invalid_argument("verify_two_user_constraints: exactly two users required");
  }
  const double mu1 = users[0].weight;
  const double mu2 = users[1].weight;
  const auto& d1 = *users[0].dist;
  const auto& d2 = *users[1].dist;
  const double r1 = thresholds[0];
  const double r2 = thresholds[1];
  const auto s1 = conditional_means(d1, r1);
  const auto s2 = conditional_means(d2, r2);

  TwoUserConstraintReport rep;
  rep.plus_gap = mu2 * s2.above_mean - mu1 * s1.below_mean;
  rep.top_gap = mu1 * s1.above_mean - mu2 * s2.above_mean;
  rep.gamma2 = mu1 * s2.cdf_at_threshold * partial_first_moment(d1, 0.0, r1, 1e-13) -
               mu2 * s1.cdf_at_threshold * partial_first_moment(d2, 0.0, r2, 1e-13);
  const double k2 = mu2 * partial_first_moment(d2, r2, kInfinity, 1e-13);
  const double k1 = mu1 * d2.ccdf(r2);
  rep.concavity_term = (k2 - k1 * r1) * d1.pdf_slope(r1);
  rep.weighted_threshold_gap = mu1 * r1 - mu2 * r2;
  return rep;
}

}  // namespace onebit
