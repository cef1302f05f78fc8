#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "onebit/quadrature.hpp"
#include "onebit/random.hpp"

namespace onebit {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Tail mass beyond which an infinite upper limit is truncated.
inline constexpr double kMomentTailMass = 1e-12;

/// Default absolute tolerance for partial first moments.
inline constexpr double kMomentTolerance = 1e-9;

/// Law of a user's achievable rate r >= 0 in bits/s/Hz.
///
/// Implementations must be immutable after construction. Only pdf and cdf are
/// required; the remaining members have generic numerical fallbacks that
/// concrete laws override with closed forms where they exist.
class RateDistribution {
 public:
  virtual ~RateDistribution() = default;

  virtual double pdf(double r) const = 0;
  virtual double cdf(double r) const = 0;
  virtual std::string describe() const = 0;

  /// 1 - cdf(r), without cancellation where the law has a closed form.
  virtual double ccdf(double r) const { return 1.0 - cdf(r); }

  /// d pdf / dr.
  virtual double pdf_slope(double r) const {
    const double h = 1e-6 * std::max(1.0, r);
    const double lo = std::max(0.0, r - h);
    return (pdf(r + h) - pdf(lo)) / (r + h - lo);
  }

  /// Smallest r with ccdf(r) <= tail_mass.
  virtual double tail_bound(double tail_mass) const {
    double hi = 1.0;
    while (ccdf(hi) > tail_mass) {
      hi *= 2.0;
      if (!std::isfinite(hi)) throw std::domain_error("tail_bound: tail does not decay");
    }
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (ccdf(mid) > tail_mass ? lo : hi) = mid;
    }
    return hi;
  }

  /// Inverse cdf for u in [0, 1).
  virtual double quantile(double u) const {
    if (u <= 0.0) return 0.0;
    double lo = 0.0;
    double hi = tail_bound(std::max(1.0 - u, 1e-300));
    for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < u ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  virtual double mean() const;

  double median() const { return quantile(0.5); }
};

/// Integral of r f(r) over [a, b]; b may be infinite.
///
/// An infinite upper limit is truncated where the remaining tail mass drops
/// below 1e-12 (relative to ccdf(a) when a sits in the tail itself).
inline double partial_first_moment(const RateDistribution& dist, double a, double b,
                                   double abs_tol = kMomentTolerance) {
  if (!(a >= 0.0)) throw std::invalid_argument("partial_first_moment: lower limit must be >= 0");
  if (a > b) throw std::invalid_argument("partial_first_moment: lower limit exceeds upper limit");
  if (a == b) return 0.0;
  if (std::isinf(b)) {
    const double tail_at_a = a > 0.0 ? dist.ccdf(a) : 1.0;
    if (tail_at_a <= 0.0) return 0.0;
    b = std::max(dist.tail_bound(kMomentTailMass),
                 dist.tail_bound(std::max(kMomentTailMass * tail_at_a, 1e-300)));
    if (b <= a) return 0.0;
  }
  auto integrand = [&dist](double r) { return r * dist.pdf(r); };
  return quadrature::integrate(integrand, a, b, abs_tol).value;
}

inline double RateDistribution::mean() const { return partial_first_moment(*this, 0.0, kInfinity); }

namespace detail {

/// exp(x) * E1(x) for x > 0, stable for large x where exp(x) overflows.
inline double scaled_exp_integral_e1(double x) {
  if (x <= 0.0) throw std::domain_error("scaled_exp_integral_e1: x must be positive");
  if (x < 40.0) return std::exp(x) * -std::expint(-x);
  // Asymptotic series; 8 terms are below double precision for x >= 40.
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 8; ++k) {
    term *= -static_cast<double>(k) / x;
    sum += term;
  }
  return sum / x;
}

}  // namespace detail

/// Shannon rate r = log2(1 + snr * X) of a unit-power Rayleigh channel, X ~ Exp(1).
class RayleighRateLaw final : public RateDistribution {
 public:
  explicit RayleighRateLaw(double avg_snr) : avg_snr_(avg_snr) {
    if (!(avg_snr > 0.0) || !std::isfinite(avg_snr)) {
      throw std::invalid_argument("RayleighRateLaw: average SNR must be positive and finite");
    }
  }

  double avg_snr() const noexcept { return avg_snr_; }

  double pdf(double r) const override {
    if (r < 0.0) return 0.0;
    const double p = std::exp2(r);
    return std::numbers::ln2 * p / avg_snr_ * std::exp(-(p - 1.0) / avg_snr_);
  }

  double cdf(double r) const override {
    if (r <= 0.0) return 0.0;
    return -std::expm1(-std::expm1(r * std::numbers::ln2) / avg_snr_);
  }

  double ccdf(double r) const override {
    if (r <= 0.0) return 1.0;
    return std::exp(-std::expm1(r * std::numbers::ln2) / avg_snr_);
  }

  double pdf_slope(double r) const override {
    if (r < 0.0) return 0.0;
    return pdf(r) * std::numbers::ln2 * (1.0 - std::exp2(r) / avg_snr_);
  }

  double tail_bound(double tail_mass) const override {
    if (tail_mass >= 1.0) return 0.0;
    return std::log1p(-avg_snr_ * std::log(tail_mass)) / std::numbers::ln2;
  }

  double quantile(double u) const override {
    if (u <= 0.0) return 0.0;
    return std::log1p(-avg_snr_ * std::log1p(-u)) / std::numbers::ln2;
  }

  /// Closed form e^{1/snr} E1(1/snr) / ln 2.
  double mean() const override {
    return detail::scaled_exp_integral_e1(1.0 / avg_snr_) / std::numbers::ln2;
  }

  std::string describe() const override {
    return "rayleigh(snr_db=" + std::to_string(10.0 * std::log10(avg_snr_)) + ")";
  }

 private:
  double avg_snr_;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

inline std::shared_ptr<const RateDistribution> make_rayleigh_rate(double avg_snr_db) {
  if (!std::isfinite(avg_snr_db)) throw std::invalid_argument("make_rayleigh_rate: SNR must be finite");
  return std::make_shared<const RayleighRateLaw>(db_to_linear(avg_snr_db));
}

/// Inverse-transform draw from the rate law.
inline double sample_rate(const RateDistribution& dist, RandomStream& rng) {
  return dist.quantile(rng.uniform());
}

/// QoS weight and rate law of one user.
struct UserProfile {
  double weight = 1.0;
  std::shared_ptr<const RateDistribution> dist;

  void validate() const {
    if (!(weight > 0.0) || !std::isfinite(weight)) {
      throw std::invalid_argument("UserProfile: weight must be positive and finite");
    }
    if (!dist) throw std::invalid_argument("UserProfile: missing rate distribution");
  }
};

inline UserProfile rayleigh_user(double weight, double avg_snr_db) {
  UserProfile user{weight, make_rayleigh_rate(avg_snr_db)};
  user.validate();
  return user;
}

}  // namespace onebit
