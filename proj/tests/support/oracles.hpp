#pragma once

// Reference computations used only by tests. None of these call into the
// library's quadrature, conditional-mean or objective code, so they can serve
// as independent checks of it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

/// e^x E1(x) by std::expint.
inline double scaled_e1(double x) { return std::exp(x) * -std::expint(-x); }

/// Mean of log2(1 + snr X), X ~ Exp(1), by composite Simpson in the exponential variable x.
inline double rayleigh_mean_simpson(double snr, std::size_t n = 200000, double x_max = 60.0) {
  auto g = [snr](double x) { return std::log1p(snr * x) / std::numbers::ln2 * std::exp(-x); };
  const double h = x_max / static_cast<double>(n);
  double s = g(0.0) + g(x_max);
  for (std::size_t i = 1; i < n; ++i) s += g(static_cast<double>(i) * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

struct RayleighClosedForm {
  double snr;

  double cdf(double r) const { return 1.0 - std::exp(-(std::exp2(r) - 1.0) / snr); }
  double mean() const { return scaled_e1(1.0 / snr) / std::numbers::ln2; }

  /// int_0^r t f(t) dt via integration by parts and E1.
  double lower_moment(double r) const {
    const double x = (std::exp2(r) - 1.0) / snr;
    const double a = 1.0 / snr;
    // e^{a} (E1(a) - E1(x + a)) = scaled_e1(a) - e^{-x} scaled_e1(x + a)
    return -std::exp(-x) * r + (scaled_e1(a) - std::exp(-x) * scaled_e1(x + a)) / std::numbers::ln2;
  }
  double upper_moment(double r) const {
    const double x = (std::exp2(r) - 1.0) / snr;
    const double a = 1.0 / snr;
    return std::exp(-x) * (r + scaled_e1(x + a) / std::numbers::ln2);
  }
  double below_mean(double r) const { return r <= 0 ? 0.0 : lower_moment(r) / cdf(r); }
  double above_mean(double r) const { return upper_moment(r) / std::exp(-(std::exp2(r) - 1.0) / snr); }
};

struct UserStats {
  double F, below, above;  // F(r), R^-, R^+
};

/// Objective by enumerating all 2^M feedback patterns and serving the argmax
/// of mu_i E[R_i | b_i] (ties to the lower index, exact comparison).
inline double phi_by_enumeration(const std::vector<UserStats>& s, const std::vector<double>& mu) {
  const std::size_t m = s.size();
  double phi = 0.0;
  for (std::uint64_t pattern = 0; pattern < (1ULL << m); ++pattern) {
    double prob = 1.0;
    double best_value = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const bool above = (pattern >> i) & 1U;
      prob *= above ? 1.0 - s[i].F : s[i].F;
      const double v = mu[i] * (above ? s[i].above : s[i].below);
      best_value = std::max(best_value, v);
    }
    phi += prob * best_value;
  }
  return phi;
}

/// Two-user objective in the region mu1 R1^+ > mu2 R2^+ > mu1 R1^- > mu2 R2^-,
/// written as mean term plus exchange term.
inline double two_user_region_a(double mu1, double mu2, double mean1, const UserStats& a, const UserStats& b) {
  return mu1 * mean1 + (mu2 * b.above - mu1 * a.below) * a.F * (1.0 - b.F);
}

/// Same region, written as the three served events.
inline double two_user_region_a_events(double mu1, double mu2, const UserStats& a, const UserStats& b) {
  return mu1 * a.above * (1.0 - a.F) + mu1 * a.below * a.F * b.F + mu2 * b.above * a.F * (1.0 - b.F);
}

/// Region mu2 R2^+ > mu1 R1^+ > mu2 R2^- > mu1 R1^-.
inline double two_user_region_b(double mu1, double mu2, const UserStats& a, const UserStats& b) {
  return mu2 * b.above * (1.0 - b.F) + mu2 * b.below * b.F * a.F + mu1 * a.above * b.F * (1.0 - a.F);
}

struct GridMax {
  std::size_t i = 0, j = 0;
  double value = -1.0;
};

/// Argmax of value(i, j) over an n x n grid.
inline GridMax grid_argmax(std::size_t n, const std::function<double(std::size_t, std::size_t)>& value) {
  GridMax best;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = value(i, j);
      if (v > best.value) best = {i, j, v};
    }
  }
  return best;
}

/// Interior grid points strictly above all eight neighbours (relative margin `rel`).
inline std::vector<GridMax> strict_local_maxima(const std::vector<std::vector<double>>& grid, double rel = 1e-13) {
  std::vector<GridMax> out;
  const std::size_t n = grid.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    for (std::size_t j = 1; j + 1 < grid[i].size(); ++j) {
      const double c = grid[i][j];
      bool is_max = true;
      for (int di = -1; di <= 1 && is_max; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (!di && !dj) continue;
          if (!(c > grid[i + di][j + dj] + rel * std::abs(c))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) out.push_back({i, j, c});
    }
  }
  return out;
}

}  // namespace oracle
