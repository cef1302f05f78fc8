#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "onebit/distributions.hpp"

namespace onebit {

/// Below this probability mass a conditional mean is replaced by its convention value.
inline constexpr double kDegenerateMass = 1e-14;

/// Weighted values closer than this (relative to max(1, |a|, |b|)) are ties.
inline constexpr double kTieTolerance = 1e-12;

/// Rate statistics of one user conditioned on its one-bit feedback.
struct ConditionalStats {
  double threshold = 0.0;
  double cdf_at_threshold = 0.0;  // probability the bit is 0
  double below_mean = 0.0;        // E[R | R < threshold]
  double above_mean = 0.0;        // E[R | R > threshold]

  double above_probability() const { return 1.0 - cdf_at_threshold; }
};

/// Priority ordering of users: ordering[k] is the user with the k-th highest priority.
using Ordering = std::vector<std::size_t>;

struct ThresholdAssignment {
  std::vector<double> thresholds;
  Ordering ordering;
  double phi = 0.0;
};

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline bool is_permutation_of_range(std::span<const std::size_t> ordering, std::size_t n) {
  if (ordering.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto u : ordering) {
    if (u >= n || seen[u]) return false;
    seen[u] = true;
  }
  return true;
}

inline void validate(const ThresholdAssignment& a) {
  for (double r : a.thresholds) {
    if (!(r >= 0.0)) throw std::invalid_argument("ThresholdAssignment: thresholds must be >= 0");
  }
  if (!is_permutation_of_range(a.ordering, a.thresholds.size())) {
    throw std::invalid_argument("ThresholdAssignment: ordering is not a permutation of the users");
  }
}

/// Conditional means of the rate above and below threshold r.
///
/// Conventions for an empty side: F(r) < 1e-14 gives below_mean = 0 and
/// 1 - F(r) < 1e-14 gives above_mean = r.
inline ConditionalStats conditional_means(const RateDistribution& dist, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("conditional_means: threshold must be >= 0");
  ConditionalStats s;
  s.threshold = r;
  const double below_mass = dist.cdf(r);
  const double above_mass = dist.ccdf(r);
  s.cdf_at_threshold = std::clamp(below_mass, 0.0, 1.0);

  // Each side is integrated to a tolerance proportional to its own mass so the
  // ratio stays accurate when the mass is small.
  if (below_mass < kDegenerateMass) {
    s.below_mean = 0.0;
  } else {
    const double tol = std::max(1e-15, 1e-11 * below_mass);
    s.below_mean = partial_first_moment(dist, 0.0, r, tol) / below_mass;
  }
  if (above_mass < kDegenerateMass) {
    s.above_mean = r;
  } else {
    const double tol = std::max(1e-15, 1e-11 * above_mass);
    s.above_mean = partial_first_moment(dist, r, kInfinity, tol) / above_mass;
  }
  return s;
}

inline std::vector<ConditionalStats> conditional_means(std::span<const UserProfile> users,
                                                       std::span<const double> thresholds) {
  if (users.size() != thresholds.size()) {
    throw std::invalid_argument("conditional_means: one threshold per user required");
  }
  std::vector<ConditionalStats> out;
  out.reserve(users.size());
  for (std::size_t i = 0; i < users.size(); ++i) out.push_back(conditional_means(*users[i].dist, thresholds[i]));
  return out;
}

inline std::vector<double> weights_of(std::span<const UserProfile> users) {
  std::vector<double> w;
  w.reserve(users.size());
  for (const auto& u : users) w.push_back(u.weight);
  return w;
}

/// True when weighted value `a` of user `ia` is preferred over value `b` of user `ib`.
/// Values within kTieTolerance go to the lower user index.
inline bool outranks(double a, std::size_t ia, double b, std::size_t ib) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  if (std::abs(a - b) <= kTieTolerance * scale) return ia < ib;
  return a > b;
}

enum class FeedbackBit { below, above };

/// Which of two users wins an exact tie in omega().
enum class TieWinner { user_i, user_j };

/// Probability that user i's weighted conditional mean beats user j's, given i's bit.
inline double omega(const ConditionalStats& stats_i, const ConditionalStats& stats_j, FeedbackBit side,
                    double mu_i, double mu_j, TieWinner ties = TieWinner::user_i) {
  const double value_i = mu_i * (side == FeedbackBit::above ? stats_i.above_mean : stats_i.below_mean);
  const std::size_t ii = ties == TieWinner::user_i ? 0 : 1;
  const std::size_t ij = 1 - ii;
  if (outranks(value_i, ii, mu_j * stats_j.above_mean, ij)) return 1.0;
  if (outranks(value_i, ii, mu_j * stats_j.below_mean, ij)) return stats_j.cdf_at_threshold;
  return 0.0;
}

namespace detail {

inline void check_lengths(std::span<const ConditionalStats> stats, std::span<const double> weights,
                          const char* who) {
  if (stats.size() != weights.size()) {
    throw std::invalid_argument(std::string(who) + ": stats and weights differ in length");
  }
}

/// Probability that user i is scheduled given its own bit, i.e. the product of Ω_ij over j != i.
inline double win_probability(std::size_t i, FeedbackBit side, std::span<const ConditionalStats> stats,
                              std::span<const double> weights) {
  double p = 1.0;
  for (std::size_t j = 0; j < stats.size() && p > 0.0; ++j) {
    if (j == i) continue;
    p *= omega(stats[i], stats[j], side, weights[i], weights[j], i < j ? TieWinner::user_i : TieWinner::user_j);
  }
  return p;
}

}  // namespace detail

/// Long-run average rate of user i under the one-bit scheduler.
inline double expected_user_rate(std::size_t i, std::span<const ConditionalStats> stats,
                                 std::span<const double> weights) {
  detail::check_lengths(stats, weights, "expected_user_rate");
  if (i >= stats.size()) throw std::out_of_range("expected_user_rate: user index out of range");
  const auto& s = stats[i];
  return s.above_mean * s.above_probability() * detail::win_probability(i, FeedbackBit::above, stats, weights) +
         s.below_mean * s.cdf_at_threshold * detail::win_probability(i, FeedbackBit::below, stats, weights);
}

/// Probability each user is scheduled in a block.
inline std::vector<double> scheduling_probabilities(std::span<const ConditionalStats> stats,
                                                    std::span<const double> weights) {
  detail::check_lengths(stats, weights, "scheduling_probabilities");
  std::vector<double> p(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    p[i] = stats[i].above_probability() * detail::win_probability(i, FeedbackBit::above, stats, weights) +
           stats[i].cdf_at_threshold * detail::win_probability(i, FeedbackBit::below, stats, weights);
  }
  return p;
}

/// Weighted sum of expected user rates, the objective being maximized.
inline double weighted_sum_rate(std::span<const ConditionalStats> stats, std::span<const double> weights) {
  detail::check_lengths(stats, weights, "weighted_sum_rate");
  double phi = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i) phi += weights[i] * expected_user_rate(i, stats, weights);
  return phi;
}

inline double weighted_sum_rate(std::span<const UserProfile> users, std::span<const double> thresholds) {
  const auto stats = conditional_means(users, thresholds);
  const auto w = weights_of(users);
  return weighted_sum_rate(stats, w);
}

namespace detail {

/// Objective when users are listed in priority order and the interleaved
/// condition holds: the first user (in priority order) reporting a 1 is served,
/// and the top user is served when every bit is 0.
inline double phi_priority_chain(std::span<const ConditionalStats> stats, std::span<const double> weights) {
  double phi = 0.0;
  double all_below = 1.0;  // product of F over higher-priority users
  for (std::size_t j = 0; j < stats.size(); ++j) {
    phi += weights[j] * stats[j].above_mean * stats[j].above_probability() * all_below;
    all_below *= stats[j].cdf_at_threshold;
  }
  if (!stats.empty()) phi += weights[0] * stats[0].below_mean * all_below;
  return phi;
}

}  // namespace detail

/// Position of the first violated inequality in the interleaved priority chain
/// mu_1 R_1^+ >= ... >= mu_M R_M^+ >= mu_1 R_1^- >= ... >= mu_M R_M^-,
/// or an empty string when the chain holds.
inline std::string priority_chain_violation(std::span<const ConditionalStats> stats,
                                            std::span<const double> weights) {
  const std::size_t m = stats.size();
  std::vector<double> chain;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < m; ++k) {
    chain.push_back(weights[k] * stats[k].above_mean);
    names.push_back("mu_" + std::to_string(k + 1) + "*R_" + std::to_string(k + 1) + "^+");
  }
  for (std::size_t k = 0; k < m; ++k) {
    chain.push_back(weights[k] * stats[k].below_mean);
    names.push_back("mu_" + std::to_string(k + 1) + "*R_" + std::to_string(k + 1) + "^-");
  }
  for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
    const double scale = std::max({1.0, std::abs(chain[k]), std::abs(chain[k + 1])});
    if (chain[k + 1] > chain[k] + kTieTolerance * scale) {
      std::ostringstream msg;
      msg.precision(12);
      msg << names[k] << " (" << chain[k] << ") < " << names[k + 1] << " (" << chain[k + 1] << ")";
      return msg.str();
    }
  }
  return {};
}

/// Objective for stats listed in priority order; requires the interleaved chain to hold.
inline double phi_ordered(std::span<const ConditionalStats> stats, std::span<const double> weights) {
  detail::check_lengths(stats, weights, "phi_ordered");
  if (auto violation = priority_chain_violation(stats, weights); !violation.empty()) {
    throw PreconditionError("phi_ordered: priority condition violated: " + violation);
  }
  return detail::phi_priority_chain(stats, weights);
}

/// Objective of the region whose priority order is `ordering`, evaluated as
/// the priority-chain formula on the relabeled users. Agrees with
/// weighted_sum_rate wherever the relabeled stats satisfy the chain.
inline double phi_region(std::span<const UserProfile> users, std::span<const double> thresholds,
                         const Ordering& ordering) {
  if (!is_permutation_of_range(ordering, users.size())) {
    throw std::invalid_argument("phi_region: ordering is not a permutation of the users");
  }
  for (double r : thresholds) {
    if (!(r >= 0.0)) throw std::invalid_argument("phi_region: thresholds must be >= 0");
  }
  const auto stats = conditional_means(users, thresholds);
  std::vector<ConditionalStats> ordered;
  std::vector<double> w;
  for (auto u : ordering) {
    ordered.push_back(stats[u]);
    w.push_back(users[u].weight);
  }
  return detail::phi_priority_chain(ordered, w);
}

/// Whether the stats, relabeled by `ordering`, satisfy the interleaved chain.
inline bool in_region(std::span<const ConditionalStats> stats, std::span<const double> weights,
                      std::span<const std::size_t> ordering) {
  std::vector<ConditionalStats> s;
  std::vector<double> w;
  for (auto u : ordering) {
    s.push_back(stats[u]);
    w.push_back(weights[u]);
  }
  return priority_chain_violation(s, w).empty();
}

/// Priority order implied by descending mu_i R_i^+ (ties to the lower index).
inline Ordering infer_ordering(std::span<const ConditionalStats> stats, std::span<const double> weights) {
  Ordering order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return outranks(weights[a] * stats[a].above_mean, a, weights[b] * stats[b].above_mean, b);
  });
  return order;
}

}  // namespace onebit
