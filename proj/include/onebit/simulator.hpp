#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "onebit/distributions.hpp"
#include "onebit/feedback_stats.hpp"
#include "onebit/parallel.hpp"
#include "onebit/random.hpp"

namespace onebit {

struct SimConfig {
  std::size_t n_blocks = 1'000'000;
  std::uint64_t seed = 1;
  std::vector<UserProfile> profiles;
  std::vector<double> thresholds;

  void validate() const {
    if (n_blocks < 1) throw std::invalid_argument("SimConfig: n_blocks must be >= 1");
    if (profiles.empty()) throw std::invalid_argument("SimConfig: no users");
    if (thresholds.size() != profiles.size()) {
      throw std::invalid_argument("SimConfig: one threshold per user required");
    }
    for (const auto& p : profiles) p.validate();
    for (double r : thresholds) {
      if (!(r >= 0.0)) throw std::invalid_argument("SimConfig: thresholds must be >= 0");
    }
  }
};

/// Sample mean with its standard error.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct SimReport {
  Estimate one_bit;   // weighted rate of the one-bit scheduler
  Estimate full_csi;  // weighted rate of the full-CSI scheduler
  std::vector<Estimate> per_user_rate;  // one-bit scheduler
  std::vector<double> scheduling_fraction;
  std::vector<double> scheduling_fraction_std_error;
  std::size_t n_blocks = 0;
};

/// User served under one-bit feedback: argmax of mu_i times the conditional
/// mean selected by bit i. Independence across users reduces the conditional
/// expectation given all bits to each user's own-bit mean.
inline std::size_t schedule_one_bit(std::span<const std::uint8_t> bits, std::span<const ConditionalStats> stats,
                                    std::span<const double> weights) {
  if (bits.size() != stats.size() || bits.size() != weights.size() || bits.empty()) {
    throw std::invalid_argument("schedule_one_bit: bits, stats and weights must have equal nonzero length");
  }
  std::size_t best = 0;
  double best_value = weights[0] * (bits[0] ? stats[0].above_mean : stats[0].below_mean);
  for (std::size_t i = 1; i < bits.size(); ++i) {
    const double v = weights[i] * (bits[i] ? stats[i].above_mean : stats[i].below_mean);
    if (outranks(v, i, best_value, best)) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

/// User served with exact rates: argmax of mu_i * rate_i.
inline std::size_t schedule_full_csi(std::span<const double> rates, std::span<const double> weights) {
  if (rates.size() != weights.size() || rates.empty()) {
    throw std::invalid_argument("schedule_full_csi: rates and weights must have equal nonzero length");
  }
  std::size_t best = 0;
  double best_value = weights[0] * rates[0];
  for (std::size_t i = 1; i < rates.size(); ++i) {
    const double v = weights[i] * rates[i];
    if (outranks(v, i, best_value, best)) {
      best = i;
      best_value = v;
    }
  }
  return best;
}

namespace detail {

/// Neumaier-compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) carry += (sum - t) + x;
    else carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

struct Moments {
  CompensatedSum sum;
  CompensatedSum sum_sq;
  void add(double x) {
    sum.add(x);
    sum_sq.add(x * x);
  }
  void merge(const Moments& o) {
    sum.add(o.sum.value());
    sum_sq.add(o.sum_sq.value());
  }
  Estimate estimate(std::size_t n) const {
    const double dn = static_cast<double>(n);
    const double mean = sum.value() / dn;
    if (n < 2) return {mean, 0.0};
    const double var = std::max(0.0, (sum_sq.value() - dn * mean * mean) / (dn - 1.0));
    return {mean, std::sqrt(var / dn)};
  }
};

struct ChunkTally {
  Moments one_bit;
  Moments full_csi;
  std::vector<Moments> user_rate;
  std::vector<std::uint64_t> served;
};

}  // namespace detail

/// Blocks per work unit. Fixed so that chunk boundaries, and therefore every
/// partial sum, are independent of the worker count.
inline constexpr std::size_t kSimulationChunk = 16384;

/// Monte-Carlo estimate of both schedulers' weighted rates.
///
/// Block k draws its rates from RandomStream(seed, k), so the report is
/// bit-identical for a given (seed, n_blocks) regardless of `workers`.
inline SimReport simulate(const SimConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  const std::size_t m = cfg.profiles.size();
  const auto weights = weights_of(cfg.profiles);
  const auto stats = conditional_means(cfg.profiles, cfg.thresholds);
  const std::size_t chunks = (cfg.n_blocks + kSimulationChunk - 1) / kSimulationChunk;
  std::vector<detail::ChunkTally> tallies(chunks);

  parallel_for(chunks, workers, [&](std::size_t c) {
    auto& t = tallies[c];
    t.user_rate.resize(m);
    t.served.assign(m, 0);
    std::vector<double> rates(m);
    std::vector<std::uint8_t> bits(m);
    const std::size_t begin = c * kSimulationChunk;
    const std::size_t end = std::min(cfg.n_blocks, begin + kSimulationChunk);
    for (std::size_t block = begin; block < end; ++block) {
      RandomStream rng(cfg.seed, block);
      for (std::size_t i = 0; i < m; ++i) {
        rates[i] = sample_rate(*cfg.profiles[i].dist, rng);
        bits[i] = rates[i] > cfg.thresholds[i] ? 1 : 0;
      }
      const std::size_t chosen = schedule_one_bit(bits, stats, weights);
      const std::size_t oracle = schedule_full_csi(rates, weights);
      t.one_bit.add(weights[chosen] * rates[chosen]);
      t.full_csi.add(weights[oracle] * rates[oracle]);
      for (std::size_t i = 0; i < m; ++i) t.user_rate[i].add(i == chosen ? rates[i] : 0.0);
      ++t.served[chosen];
    }
  });

  detail::ChunkTally total;
  total.user_rate.resize(m);
  total.served.assign(m, 0);
  for (const auto& t : tallies) {
    total.one_bit.merge(t.one_bit);
    total.full_csi.merge(t.full_csi);
    for (std::size_t i = 0; i < m; ++i) {
      total.user_rate[i].merge(t.user_rate[i]);
      total.served[i] += t.served[i];
    }
  }

  SimReport report;
  report.n_blocks = cfg.n_blocks;
  report.one_bit = total.one_bit.estimate(cfg.n_blocks);
  report.full_csi = total.full_csi.estimate(cfg.n_blocks);
  const double n = static_cast<double>(cfg.n_blocks);
  for (std::size_t i = 0; i < m; ++i) {
    report.per_user_rate.push_back(total.user_rate[i].estimate(cfg.n_blocks));
    const double p = static_cast<double>(total.served[i]) / n;
    report.scheduling_fraction.push_back(p);
    report.scheduling_fraction_std_error.push_back(std::sqrt(p * (1.0 - p) / n));
  }
  return report;
}

}  // namespace onebit
