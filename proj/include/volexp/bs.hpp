#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "volexp/errors.hpp"

namespace volexp {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

/// Standard normal CDF via erfc, accurate to ~1e-15 absolute in both tails.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

/// Undiscounted Black–Scholes inputs in total-variance form: `total_variance`
/// plays the role of sigma^2 * T.
struct BsQuote {
  double spot = 0.0;
  double strike = 0.0;
  double total_variance = 0.0;
};

struct DPlusMinus {
  double d_plus = 0.0;
  double d_minus = 0.0;
};

namespace detail {
inline void require_positive_spot_strike(const BsQuote& q, const char* who) {
  if (!(q.spot > 0.0) || !(q.strike > 0.0)) {
    std::ostringstream msg;
    msg << who << ": spot and strike must be positive";
    throw DomainError(msg.str());
  }
}
}  // namespace detail

/// d± = (log(s/K) ± t/2) / sqrt(t). Requires t > 0.
inline DPlusMinus d_pm(const BsQuote& q) {
  detail::require_positive_spot_strike(q, "d_pm");
  if (!(q.total_variance > 0.0)) {
    throw DomainError("d_pm: total variance must be positive");
  }
  const double sqrt_t = std::sqrt(q.total_variance);
  const double log_m = std::log(q.spot / q.strike) / sqrt_t;
  return {log_m + 0.5 * sqrt_t, log_m - 0.5 * sqrt_t};
}

/// Put price K*Phi(-d-) - s*Phi(-d+); t = 0 returns the payoff (K-s)+.
inline double put_price(const BsQuote& q) {
  detail::require_positive_spot_strike(q, "put_price");
  if (!(q.total_variance >= 0.0)) {
    throw DomainError("put_price: total variance must be nonnegative");
  }
  if (q.total_variance == 0.0) return std::max(q.strike - q.spot, 0.0);
  const DPlusMinus d = d_pm(q);
  return q.strike * norm_cdf(-d.d_minus) - q.spot * norm_cdf(-d.d_plus);
}

/// Call defined through put-call parity (zero rates): c = p + s - K.
inline double call_price(const BsQuote& q) {
  return put_price(q) + q.spot - q.strike;
}

/// Sensitivity of the put to total variance: K*phi(-d-)/(2*sqrt(t)).
/// The algebraically equal form s*phi(-d+)/(2*sqrt(t)) is evaluated too and
/// cross-checked, guarding against inconsistent d± upstream.
inline double dp_dt(const BsQuote& q) {
  detail::require_positive_spot_strike(q, "dp_dt");
  if (!(q.total_variance > 0.0)) {
    throw DomainError("dp_dt: total variance must be positive");
  }
  const DPlusMinus d = d_pm(q);
  const double denom = 2.0 * std::sqrt(q.total_variance);
  const double via_strike = q.strike * norm_pdf(d.d_minus) / denom;
  const double via_spot = q.spot * norm_pdf(d.d_plus) / denom;
  if (std::fabs(via_strike - via_spot) >
      1e-12 * std::max(via_strike, std::numeric_limits<double>::min())) {
    throw NumericError("dp_dt: identity K*phi(-d-) = s*phi(-d+) violated");
  }
  return via_strike;
}

/// Inverts put_price in total variance. Requires the strict no-arbitrage
/// bounds (K-s)+ < price < K; safeguarded Newton (dp_dt as derivative) with
/// a bisection fallback keeps the bracket shrinking when Newton misbehaves.
inline double implied_total_variance(double price, double spot, double strike) {
  if (!(spot > 0.0) || !(strike > 0.0)) {
    throw DomainError("implied_total_variance: spot and strike must be positive");
  }
  const double intrinsic = std::max(strike - spot, 0.0);
  if (!(price > intrinsic) || !(price < strike)) {
    throw DomainError(
        "implied_total_variance: price violates strict no-arbitrage bounds");
  }

  double lo = 0.0;
  double hi = 0.25;
  while (put_price({spot, strike, hi}) < price) {
    lo = hi;
    hi *= 4.0;
    if (hi > 1e12) {
      throw NumericError("implied_total_variance: failed to bracket the root");
    }
  }

  double t = (0.25 > lo && 0.25 < hi) ? 0.25 : 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double diff = put_price({spot, strike, t}) - price;
    if (diff == 0.0) break;
    (diff < 0.0 ? lo : hi) = t;

    double t_next = std::numeric_limits<double>::quiet_NaN();
    const double deriv = dp_dt({spot, strike, t});
    if (deriv > 0.0) t_next = t - diff / deriv;
    if (!(t_next > lo && t_next < hi)) t_next = 0.5 * (lo + hi);
    if (t_next == t) break;  // no representable progress left
    t = t_next;
  }

  if (std::fabs(put_price({spot, strike, t}) - price) > 1e-12 * strike) {
    throw NumericError("implied_total_variance: no convergence to tolerance");
  }
  return t;
}

}  // namespace volexp
