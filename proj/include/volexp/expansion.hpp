#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "volexp/bs.hpp"
#include "volexp/errors.hpp"
#include "volexp/model.hpp"
#include "volexp/quadrature.hpp"

namespace volexp {

/// First-order corrected density of the normalized log-price martingale:
///   phi_eps(x) = phi(x) + eps/(2 sqrt(v)) (m phi)'(x) + eps/(2 v) (m phi)''(x).
/// It integrates to one but may dip below zero in the tails for large
/// eps*|m| — a signed density by construction; nothing here clamps it.
struct ExpandedDensity {
  ExpansionInputs inputs;
  ConditionalMean cond_mean;
};

namespace detail {

/// phi_eps(x) / phi(x). For an affine mean the derivative terms collapse to
/// Hermite polynomials ((x m phi)' = (1-x^2) m phi, '' = (x^3-3x) m phi),
/// which is the hot evaluation path; custom means use their derivatives.
inline double density_bracket(const ExpansionInputs& in,
                              const ConditionalMean& cm, double x) {
  if (in.eps == 0.0) return 1.0;
  const double sv = std::sqrt(in.v_eps);
  const double c1 = in.eps / (2.0 * sv);
  const double c2 = in.eps / (2.0 * in.v_eps);
  if (const auto* a = std::get_if<AffineMean>(&cm)) {
    return 1.0 + a->exy * (c1 * (1.0 - x * x) + c2 * (x * x * x - 3.0 * x));
  }
  const auto& cu = std::get<CustomMean>(cm);
  const double m = cu.m(x), dm = cu.dm(x), d2m = cu.d2m(x);
  return 1.0 + c1 * (dm - x * m) +
         c2 * (d2m - 2.0 * x * dm + (x * x - 1.0) * m);
}

}  // namespace detail

inline double expanded_density_at(const ExpandedDensity& d, double x) {
  return norm_pdf(x) * detail::density_bracket(d.inputs, d.cond_mean, x);
}

/// Minimum of the signed density over |x| <= 12 (diagnostic for how far the
/// expansion is from a probability density at the given eps).
inline double expanded_density_min(const ExpandedDensity& d, int n_scan = 4801) {
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_scan; ++i) {
    const double x = -12.0 + 24.0 * i / (n_scan - 1);
    lo = std::min(lo, expanded_density_at(d, x));
  }
  return lo;
}

/// E[f(S_T)] at first order: Gaussian-weighted quadrature of
/// f(S_0 exp(sqrt(v) x - v/2)) against phi_eps. The payoff must be bounded
/// (price calls through parity, not directly). Declare payoff kinks in x
/// coordinates via `split_points`.
template <class F>
double expected_payoff(double spot, const ExpansionInputs& in,
                       const ConditionalMean& cm, F&& payoff,
                       double rel_tol = 1e-9,
                       std::vector<double> split_points = {}) {
  if (!(spot > 0.0)) throw DomainError("expected_payoff: spot must be positive");
  const double sv = std::sqrt(in.v_eps);
  return integrate_gaussian_weighted(
             [&](double x) {
               const double s = spot * std::exp(sv * x - 0.5 * in.v_eps);
               return payoff(s) * detail::density_bracket(in, cm, x);
             },
             rel_tol, std::move(split_points))
      .value;
}

/// The three equivalent first-order put prices and their shared pieces.
///   form_a: p(S0,v) + eps/(2 sqrt(v)) K m(-d-) phi(-d-)
///   form_b: p(S0,v) + eps dp/dt(S0,v) m(-d-)          (same up to rounding)
///   form_c: p(S0, v + eps m(-d-))                      (differs at O(eps^2))
struct PutExpansionReport {
  double leading = 0.0;
  double correction = 0.0;
  double form_a = 0.0;
  double form_b = 0.0;
  double form_c = 0.0;
  double equivalent_variance = 0.0;
};

inline PutExpansionReport put_expansion(double spot, const ExpansionInputs& in,
                                        const ConditionalMean& cm,
                                        double strike) {
  if (!(spot > 0.0) || !(strike > 0.0)) {
    throw DomainError("put_expansion: spot and strike must be positive");
  }
  const BsQuote q{spot, strike, in.v_eps};
  const double x0 = -d_pm(q).d_minus;
  const double m_at = mean_value(cm, x0);

  PutExpansionReport r;
  r.leading = put_price(q);
  r.correction =
      in.eps / (2.0 * std::sqrt(in.v_eps)) * strike * m_at * norm_pdf(x0);
  r.form_a = r.leading + r.correction;
  r.form_b = r.leading + in.eps * dp_dt(q) * m_at;
  r.equivalent_variance = in.v_eps + in.eps * m_at;
  if (r.equivalent_variance < 0.0) {
    throw DomainError(
        "put_expansion: equivalent total variance is negative (eps too large "
        "for this conditional mean)");
  }
  r.form_c = put_price({spot, strike, r.equivalent_variance});
  return r;
}

/// First-order P[S_T < K]. Integrating phi_eps up to -d- kills the derivative
/// terms exactly: Phi(-d-) + eps/(2 sqrt(v)) g(-d-) + eps/(2v) g'(-d-) with
/// g = m phi.
inline double digital_expansion(double spot, const ExpansionInputs& in,
                                const ConditionalMean& cm, double strike) {
  if (!(spot > 0.0) || !(strike > 0.0)) {
    throw DomainError("digital_expansion: spot and strike must be positive");
  }
  const double x0 = -d_pm({spot, strike, in.v_eps}).d_minus;
  const double base = norm_cdf(x0);
  if (in.eps == 0.0) return base;
  const double phi = norm_pdf(x0);
  const double g = mean_value(cm, x0) * phi;
  const double gp = (mean_d1(cm, x0) - x0 * mean_value(cm, x0)) * phi;
  const double sv = std::sqrt(in.v_eps);
  return base + in.eps / (2.0 * sv) * g + in.eps / (2.0 * in.v_eps) * gp;
}

struct SmilePoint {
  double strike = 0.0;
  double log_moneyness = 0.0;        // k = log(K / S0)
  double implied_total_variance = 0.0;
};

/// First-order implied total variance: v_hat(K) = v + eps * m(-d-(S0, v)).
inline SmilePoint implied_variance_expansion(double spot,
                                             const ExpansionInputs& in,
                                             const ConditionalMean& cm,
                                             double strike) {
  if (!(spot > 0.0) || !(strike > 0.0)) {
    throw DomainError(
        "implied_variance_expansion: spot and strike must be positive");
  }
  const double x0 = -d_pm({spot, strike, in.v_eps}).d_minus;
  return {strike, std::log(strike / spot),
          in.v_eps + in.eps * mean_value(cm, x0)};
}

inline std::vector<SmilePoint> smile(double spot, const ExpansionInputs& in,
                                     const ConditionalMean& cm,
                                     const std::vector<double>& strikes) {
  std::vector<SmilePoint> out;
  out.reserve(strikes.size());
  for (double k : strikes) {
    out.push_back(implied_variance_expansion(spot, in, cm, k));
  }
  return out;
}

/// First-order sqrt-total-variance smile w(k) = sqrt(v) + eps*m(x(k))/(2 sqrt(v))
/// with x(k) = k/sqrt(v) + sqrt(v)/2 (the expansion of sqrt(v_hat) consistent
/// to O(eps)). Its k-derivative is the skew; differentiate this, not
/// sqrt(v_hat), when cross-checking skews to better than O(eps^2).
inline double smile_vol_first_order(const ExpansionInputs& in,
                                    const ConditionalMean& cm, double k) {
  const double sv = std::sqrt(in.v_eps);
  const double x = k / sv + 0.5 * sv;
  return sv + in.eps * mean_value(cm, x) / (2.0 * sv);
}

/// At-the-money skew d/dk sqrt(v_hat) = eps * E[XY] / (2v); affine means only
/// (the generic formula below covers the rest).
inline double skew_atm(const ExpansionInputs& in, const ConditionalMean& cm) {
  const auto* a = std::get_if<AffineMean>(&cm);
  if (a == nullptr) {
    throw DomainError("skew_atm requires an affine mean; use skew_generic");
  }
  return in.eps * a->exy / (2.0 * in.v_eps);
}

/// Skew at log-moneyness k: eps/(2v) * m'(k/sqrt(v) + sqrt(v)/2).
inline double skew_generic(const ExpansionInputs& in, const ConditionalMean& cm,
                           double k) {
  const double sv = std::sqrt(in.v_eps);
  return in.eps / (2.0 * in.v_eps) * mean_d1(cm, k / sv + 0.5 * sv);
}

}  // namespace volexp
