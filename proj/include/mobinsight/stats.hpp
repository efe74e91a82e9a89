#ifndef MOBINSIGHT_STATS_HPP
#define MOBINSIGHT_STATS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "mobinsight/io.hpp"

namespace mobinsight::stats {

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Population variance, two-pass.
inline double population_variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// Sample Pearson correlation with a t-test p-value (n - 2 dof).
inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: length mismatch");
  if (x.size() < 3) throw Error("pearson: need at least 3 points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance");
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(c.n) - 2.0;
  if (std::abs(c.r) >= 1.0) {
    c.p_value = 0.0;
  } else {
    const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
    c.p_value = student_t_two_sided_p(t, df);
  }
  return c;
}

}  // namespace mobinsight::stats

#endif  // MOBINSIGHT_STATS_HPP
