#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <sstream>
#include <utility>
#include <vector>

#include "volexp/errors.hpp"

namespace volexp {

struct QuadResult {
  double value = 0.0;
  double abs_error_estimate = 0.0;
  int subdivisions = 0;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule (positive abscissae).
// Values from the classic QUADPACK dqk15 tables.
inline constexpr double kGk15Nodes[8] = {
    0.9914553711208126, 0.9491079123427585, 0.8648644233597691,
    0.7415311855993944, 0.5860872354676911, 0.4058451513773972,
    0.2077849550078985, 0.0};
inline constexpr double kGk15Weights[8] = {
    0.02293532201052922, 0.06309209262997855, 0.1047900103222502,
    0.1406532597155259,  0.1690047266392679,  0.1903505780647854,
    0.2044329400752989,  0.2094821410847278};
inline constexpr double kGauss7Weights[4] = {
    0.1294849661688697, 0.2797053914892767, 0.3818300505051189,
    0.4179591836734694};

struct QuadPanel {
  double a = 0.0, b = 0.0;
  double value = 0.0;
  double error = 0.0;
  double resabs = 0.0;  // \int |f| estimate: sets the attainable error floor
  bool operator<(const QuadPanel& o) const { return error < o.error; }
};

// One Gauss–Kronrod pass over [a,b]; the error estimate follows the QUADPACK
// rescaling of |K15 - G7| so that it stays sharp on smooth integrands.
template <class F>
QuadPanel gk15_panel(F&& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);

  const double fc = f(center);
  double result_gauss = kGauss7Weights[3] * fc;
  double result_kronrod = kGk15Weights[7] * fc;
  double resabs = kGk15Weights[7] * std::fabs(fc);

  double fv1[7], fv2[7];
  for (int i = 0; i < 7; ++i) {
    const double dx = half * kGk15Nodes[i];
    fv1[i] = f(center - dx);
    fv2[i] = f(center + dx);
    const double fsum = fv1[i] + fv2[i];
    result_kronrod += kGk15Weights[i] * fsum;
    resabs += kGk15Weights[i] * (std::fabs(fv1[i]) + std::fabs(fv2[i]));
    if (i % 2 == 1) result_gauss += kGauss7Weights[(i - 1) / 2] * fsum;
  }

  const double mean = 0.5 * result_kronrod;
  double resasc = kGk15Weights[7] * std::fabs(fc - mean);
  for (int i = 0; i < 7; ++i) {
    resasc += kGk15Weights[i] *
              (std::fabs(fv1[i] - mean) + std::fabs(fv2[i] - mean));
  }

  QuadPanel p;
  p.a = a;
  p.b = b;
  p.value = result_kronrod * half;
  resabs *= std::fabs(half);
  resasc *= std::fabs(half);
  double err = std::fabs((result_kronrod - result_gauss) * half);
  if (resasc != 0.0 && err != 0.0) {
    err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  }
  const double eps = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50.0 * eps)) {
    err = std::max(err, 50.0 * eps * resabs);
  }
  p.error = err;
  p.resabs = resabs;
  return p;
}

inline constexpr int kMaxPanels = 100000;

}  // namespace detail

/// Adaptive Gauss–Kronrod integration of f over [a,b] to a relative tolerance,
/// floored at the round-off level 50 eps \int|f| (a tighter request cannot be
/// met in doubles, e.g. for strongly cancelling oscillatory integrands).
/// Interior `split_points` seed panel boundaries (use them for kinks or jumps).
/// Throws NumericError when subdivision cannot reach the tolerance.
template <class F>
QuadResult integrate(F&& f, double a, double b, double rel_tol,
                     std::vector<double> split_points = {}) {
  if (!(a <= b) || !std::isfinite(a) || !std::isfinite(b)) {
    throw DomainError("integrate: bad interval");
  }
  if (a == b) return {};

  std::vector<double> edges;
  edges.push_back(a);
  std::sort(split_points.begin(), split_points.end());
  for (double s : split_points) {
    if (s > edges.back() && s < b) edges.push_back(s);
  }
  edges.push_back(b);

  std::priority_queue<detail::QuadPanel> panels;
  double total_value = 0.0, total_error = 0.0, total_resabs = 0.0;
  int n_panels = 0;
  auto push = [&](detail::QuadPanel p) {
    if (!std::isfinite(p.value) || !std::isfinite(p.error)) {
      std::ostringstream msg;
      msg << "integrate: integrand not finite on [" << p.a << ", " << p.b
          << "]";
      throw NumericError(msg.str());
    }
    total_value += p.value;
    total_error += p.error;
    total_resabs += p.resabs;
    panels.push(p);
    ++n_panels;
  };
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    push(detail::gk15_panel(f, edges[i], edges[i + 1]));
  }

  // Tolerance floor: each panel's error estimate is itself floored at
  // 50 eps resabs, so the sum cannot drop below that level; the factor two of
  // headroom keeps the refinement from grinding panels that are already at
  // their individual floors.
  const double mach_eps = std::numeric_limits<double>::epsilon();
  auto tolerance = [&] {
    return std::max(rel_tol * std::fabs(total_value),
                    100.0 * mach_eps * total_resabs);
  };
  while (total_error > tolerance()) {
    if (n_panels >= detail::kMaxPanels) {
      std::ostringstream msg;
      msg << "integrate: subdivision limit reached (partial value "
          << total_value << ", error estimate " << total_error << ")";
      throw NumericError(msg.str());
    }
    detail::QuadPanel worst = panels.top();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) {
      // The dominant panel is already at the resolution limit of doubles and
      // still carries the error budget: the integrand is not resolvable
      // (typically a non-integrable singularity).
      std::ostringstream msg;
      msg << "integrate: integrand not resolvable near x = " << worst.a
          << " (error estimate " << total_error << ")";
      throw NumericError(msg.str());
    }
    panels.pop();
    total_value -= worst.value;
    total_error -= worst.error;
    total_resabs -= worst.resabs;
    --n_panels;
    push(detail::gk15_panel(f, worst.a, mid));
    push(detail::gk15_panel(f, mid, worst.b));
  }

  // Re-sum panels for the final result: the incremental totals above carry
  // accumulated rounding from the add/subtract churn.
  QuadResult out;
  out.subdivisions = n_panels;
  double value = 0.0, error = 0.0;
  while (!panels.empty()) {
    value += panels.top().value;
    error += panels.top().error;
    panels.pop();
  }
  out.value = value;
  out.abs_error_estimate = error;
  return out;
}

/// Integrates t^{H-1/2} * g(t) over [0,b] for H in (0, 1/2]. The substitution
/// u = t^{H+1/2} removes the endpoint singularity exactly, so plain panels
/// apply afterwards. `split_points` are positions in the original t variable.
template <class G>
QuadResult integrate_power_singularity(G&& g, double hurst, double b,
                                       double rel_tol,
                                       std::vector<double> split_points = {}) {
  if (!(hurst > 0.0) || !(hurst <= 0.5)) {
    throw DomainError("integrate_power_singularity: H must lie in (0, 1/2]");
  }
  if (!(b >= 0.0)) throw DomainError("integrate_power_singularity: b < 0");
  if (b == 0.0) return {};
  const double p = hurst + 0.5;
  const double inv_p = 1.0 / p;
  for (double& s : split_points) s = std::pow(s, p);
  QuadResult r = integrate([&](double u) { return g(std::pow(u, inv_p)); },
                           0.0, std::pow(b, p), rel_tol, std::move(split_points));
  r.value *= inv_p;
  r.abs_error_estimate *= inv_p;
  return r;
}

/// Integrates h(x) against the standard normal density over |x| <= 12
/// (tail mass beyond is < 1e-31). Declare kinks of h via `split_points`.
template <class H>
QuadResult integrate_gaussian_weighted(H&& h, double rel_tol,
                                       std::vector<double> split_points = {}) {
  constexpr double bound = 12.0;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  split_points.erase(
      std::remove_if(split_points.begin(), split_points.end(),
                     [](double s) { return !(s > -bound && s < bound); }),
      split_points.end());
  return integrate(
      [&](double x) { return h(x) * inv_sqrt_2pi * std::exp(-0.5 * x * x); },
      -bound, bound, rel_tol, std::move(split_points));
}

}  // namespace volexp
