#pragma once

// Distribution of the inner product of two independent uniform points on
// the unit sphere S^{d-1}, plus the special functions it is built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spreadout/error.hpp"
#include "spreadout/linalg.hpp"
#include "spreadout/random.hpp"

namespace spreadout {

/// A point on the unit sphere in R^d, d >= 2.
class UnitVector {
 public:
  static constexpr double kNormTolerance = 1e-9;

  explicit UnitVector(std::vector<double> coords) : coords_(std::move(coords)) {
    if (coords_.size() < 2) throw DomainError("UnitVector: dimension must be >= 2");
    if (std::abs(norm2(coords_) - 1.0) > kNormTolerance)
      throw DomainError("UnitVector: coordinates are not unit norm");
  }

  /// Scales `v` to unit length. Throws NumericError for a (near) zero vector.
  static UnitVector normalized(std::vector<double> v) {
    const double n = norm2(v);
    if (!(n > 1e-300)) throw NumericError("UnitVector::normalized: zero vector");
    for (double& x : v) x /= n;
    return UnitVector(std::move(v));
  }

  std::size_t dim() const noexcept { return coords_.size(); }
  std::span<const double> coords() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }

 private:
  std::vector<double> coords_;
};

/// Sample mean and second moment of p1'p2 over n_samples independent pairs.
struct InnerProductStats {
  double mean = 0.0;
  double second_moment = 0.0;
  std::uint64_t n_samples = 0;
};

namespace detail {

inline double log_beta(double a, double b) {
  if (a + b < 150.0) return std::log(std::tgamma(a) * std::tgamma(b) / std::tgamma(a + b));
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for I_x(a,b), modified Lentz. Converges fast for
// x < (a+1)/(a+b+2).
inline double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
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
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

// I_x(a,b) with y = 1 - x supplied separately so callers that know 1 - x
// exactly (e.g. y = s^2) do not lose it to cancellation.
inline double incomplete_beta(double x, double y, double a, double b) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log(y) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - std::exp(log_front) * beta_continued_fraction(y, b, a) / b;
}

inline double inner_product_shape(int d) {
  if (d < 2) throw DomainError("sphere dimension must be >= 2, got " + std::to_string(d));
  return 0.5 * (d - 1);
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double regularized_incomplete_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("regularized_incomplete_beta: x outside [0,1]");
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("regularized_incomplete_beta: a and b must be positive");
  return std::clamp(detail::incomplete_beta(x, 1.0 - x, a, b), 0.0, 1.0);
}

/// B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b).
inline double beta_function(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("beta_function: a and b must be positive");
  if (a + b < 150.0) return std::tgamma(a) * std::tgamma(b) / std::tgamma(a + b);
  return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

/// Density of p1'p2 for independent uniform p1, p2 on S^{d-1}:
/// (1 - s^2)^{(d-1)/2 - 1} / B((d-1)/2, 1/2) on [-1, 1], 0 elsewhere.
/// For d = 2 the density is infinite at s = +-1.
inline double inner_product_pdf(double s, int d) {
  const double a = detail::inner_product_shape(d);
  if (s < -1.0 || s > 1.0) return 0.0;
  const double one_minus_s2 = (1.0 - s) * (1.0 + s);
  if (d == 2 && one_minus_s2 == 0.0) return std::numeric_limits<double>::infinity();
  return std::pow(one_minus_s2, a - 1.0) / beta_function(a, 0.5);
}

/// P(p1'p2 <= s). Lower half is the spherical-cap area, upper half its
/// complement.
inline double inner_product_cdf(double s, int d) {
  const double a = detail::inner_product_shape(d);
  if (s < -1.0) return 0.0;
  if (s > 1.0) return 1.0;
  const double x = (1.0 - s) * (1.0 + s);
  const double tail = 0.5 * detail::incomplete_beta(x, s * s, a, 0.5);
  return s < 0.0 ? tail : 1.0 - tail;
}

/// Fraction of the sphere's area in the cap {p : p1'p <= cos_theta}.
/// The cap below the hyperplane has height h = 1 + cos_theta and area
/// fraction 1/2 I_{2h - h^2}((d-1)/2, 1/2); for cos_theta >= 0 the region is
/// the complement of the opposite cap of height 1 - cos_theta.
inline double spherical_cap_fraction(double cos_theta, int d) {
  const double a = detail::inner_product_shape(d);
  if (cos_theta <= -1.0) return 0.0;
  if (cos_theta >= 1.0) return 1.0;
  if (cos_theta < 0.0) {
    const double h = 1.0 + cos_theta;
    return 0.5 * detail::incomplete_beta(h * (2.0 - h), (1.0 - h) * (1.0 - h), a, 0.5);
  }
  const double h = 1.0 - cos_theta;
  return 1.0 - 0.5 * detail::incomplete_beta(h * (2.0 - h), (1.0 - h) * (1.0 - h), a, 0.5);
}

/// Fills `out` with a uniform point on the sphere: i.i.d. standard normals,
/// then normalized.
template <std::uniform_random_bit_generator G>
void sample_uniform_sphere_into(std::span<double> out, G& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    double ss = 0.0;
    for (double& x : out) {
      x = normal(rng);
      ss += x * x;
    }
    if (ss > 1e-200) {
      const double inv = 1.0 / std::sqrt(ss);
      for (double& x : out) x *= inv;
      return;
    }
  }
}

template <std::uniform_random_bit_generator G>
UnitVector sample_uniform_sphere(int d, G& rng) {
  detail::inner_product_shape(d);
  std::vector<double> v(static_cast<std::size_t>(d));
  sample_uniform_sphere_into(std::span<double>(v), rng);
  return UnitVector(std::move(v));
}

/// Inner products of n independent pairs of uniform sphere points.
inline std::vector<double> sample_inner_products(int d, std::uint64_t n, std::uint64_t seed) {
  detail::inner_product_shape(d);
  Rng rng(seed);
  std::vector<double> p(static_cast<std::size_t>(d)), q(static_cast<std::size_t>(d));
  std::vector<double> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    sample_uniform_sphere_into(std::span<double>(p), rng);
    sample_uniform_sphere_into(std::span<double>(q), rng);
    out.push_back(dot(p, q));
  }
  return out;
}

inline InnerProductStats monte_carlo_moments(int d, std::uint64_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("monte_carlo_moments: n must be >= 1");
  const std::vector<double> ips = sample_inner_products(d, n, seed);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double s : ips) {
    sum += s;
    sum_sq += s * s;
  }
  const double nd = static_cast<double>(n);
  return {sum / nd, std::min(1.0, sum_sq / nd), n};
}

/// Kolmogorov-Smirnov distance between the empirical cdf of `samples` and
/// inner_product_cdf(., d).
inline double ks_distance(std::vector<double> samples, int d) {
  if (samples.empty()) throw ConfigError("ks_distance: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = inner_product_cdf(samples[i], d);
    worst = std::max({worst, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return worst;
}

}  // namespace spreadout
