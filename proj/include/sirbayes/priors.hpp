#pragma once

// Prior descriptors and the smooth bijections that map bounded parameters to
// the real line.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/math/distributions/normal.hpp>

namespace sirbayes {

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double std_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> unit;
  return boost::math::quantile(unit, p);
}

struct PriorDescriptor {
  enum class Kind { uniform, truncated_normal, empirical };

  Kind kind = Kind::uniform;
  double mean = 0.0;
  double sd = 1.0;
  double lo = 0.0;
  double hi = 1.0;

  static PriorDescriptor uniform(double lo, double hi) { return {Kind::uniform, 0.0, 1.0, lo, hi}; }
  static PriorDescriptor truncated_normal(double mean, double sd, double lo, double hi) {
    return {Kind::truncated_normal, mean, sd, lo, hi};
  }
  static PriorDescriptor empirical(double mean, double sd, double lo, double hi) {
    return {Kind::empirical, mean, sd, lo, hi};
  }

  bool normal_family() const noexcept { return kind != Kind::uniform; }

  void validate(const std::string& name) const {
    if (!(lo < hi)) throw std::invalid_argument("prior for " + name + ": lower bound must be below upper bound");
    if (kind == Kind::uniform && !(std::isfinite(lo) && std::isfinite(hi)))
      throw std::invalid_argument("prior for " + name + ": uniform bounds must be finite");
    if (normal_family() && !(sd > 0.0 && std::isfinite(mean)))
      throw std::invalid_argument("prior for " + name + ": normal prior needs finite mean and positive sd");
    if (!std::isfinite(lo)) throw std::invalid_argument("prior for " + name + ": lower bound must be finite");
  }

  bool contains(double x) const noexcept { return x >= lo && x <= hi; }

  // log of the normal mass inside [lo, hi]
  double log_normalizer() const {
    const double a = (lo - mean) / sd;
    const double b = (hi - mean) / sd;
    double mass;
    if (a > 0.0)
      mass = std_normal_cdf(-a) - std_normal_cdf(-b);
    else
      mass = std_normal_cdf(b) - std_normal_cdf(a);
    return std::log(mass);
  }

  double log_density(double x) const {
    if (!contains(x)) return -std::numeric_limits<double>::infinity();
    if (kind == Kind::uniform) return -std::log(hi - lo);
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - log_normalizer();
  }

  double dlog_density(double x) const { return normal_family() ? -(x - mean) / (sd * sd) : 0.0; }

  template <class Rng>
  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (kind == Kind::uniform) return lo + (hi - lo) * unif(rng);
    const double pa = std_normal_cdf((lo - mean) / sd);
    const double pb = std::isfinite(hi) ? std_normal_cdf((hi - mean) / sd) : 1.0;
    double p = pa + (pb - pa) * unif(rng);
    p = std::clamp(p, 1e-300, 1.0 - 1e-16);
    return std::clamp(mean + sd * std_normal_quantile(p), lo, hi);
  }
};

inline const char* to_string(PriorDescriptor::Kind k) {
  switch (k) {
    case PriorDescriptor::Kind::uniform: return "uniform";
    case PriorDescriptor::Kind::truncated_normal: return "truncated_normal";
    case PriorDescriptor::Kind::empirical: return "empirical";
  }
  return "uniform";
}

inline PriorDescriptor::Kind prior_kind_from_string(const std::string& s) {
  if (s == "uniform") return PriorDescriptor::Kind::uniform;
  if (s == "truncated_normal") return PriorDescriptor::Kind::truncated_normal;
  if (s == "empirical") return PriorDescriptor::Kind::empirical;
  throw std::invalid_argument("unknown prior kind '" + s + "'");
}

// Value of a bounded parameter together with the pieces the gradient needs.
struct BoundedValue {
  double value;
  double dvalue;    // d value / du
  double log_jac;   // log |d value / du|
  double dlog_jac;  // d log_jac / du
};

// Logit-affine map onto (lo, hi), or shifted exp when hi is infinite.
inline BoundedValue to_interval(double u, double lo, double hi) {
  if (!std::isfinite(hi)) {
    const double e = std::exp(u);
    return {lo + e, e, u, 1.0};
  }
  const double s = logistic(u);
  const double width = hi - lo;
  return {lo + width * s, width * s * (1.0 - s), std::log(width) - softplus(-u) - softplus(u), 1.0 - 2.0 * s};
}

inline double from_interval(double v, double lo, double hi) {
  if (!std::isfinite(hi)) return std::log(v - lo);
  const double p = (v - lo) / (hi - lo);
  return std::log(p) - std::log1p(-p);
}

}  // namespace sirbayes
