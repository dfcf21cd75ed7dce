#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <utility>
#include <variant>
#include <vector>

#include "volexp/bs.hpp"
#include "volexp/errors.hpp"
#include "volexp/quadrature.hpp"

namespace volexp {

// ---------------------------------------------------------------------------
// Volterra kernels
// ---------------------------------------------------------------------------

/// k(t) = a * exp(-b*t)
struct ExponentialKernel {
  double a = 0.0;
  double b = 0.0;
};

/// k(t) = a * t^{H - 1/2}, Hurst parameter H in (0, 1/2]. H < 1/2 makes the
/// kernel singular at t=0 but still locally square integrable.
struct PowerKernel {
  double a = 0.0;
  double hurst = 0.0;
};

/// Piecewise-linear kernel through (times[i], values[i]); constant
/// extrapolation outside the sampled range.
struct TabulatedKernel {
  std::vector<double> times;
  std::vector<double> values;
};

using KernelSpec = std::variant<ExponentialKernel, PowerKernel, TabulatedKernel>;

inline void validate_kernel(const KernelSpec& kernel) {
  std::visit(
      [](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ExponentialKernel>) {
          if (!(k.a > 0.0) || !(k.b > 0.0)) {
            throw DomainError("exponential kernel requires a > 0 and b > 0");
          }
        } else if constexpr (std::is_same_v<K, PowerKernel>) {
          if (!(k.a > 0.0)) throw DomainError("power kernel requires a > 0");
          if (!(k.hurst > 0.0) || !(k.hurst <= 0.5)) {
            throw DomainError("power kernel requires H in (0, 1/2]");
          }
        } else {
          if (k.times.size() < 2 || k.times.size() != k.values.size()) {
            throw DomainError(
                "tabulated kernel needs >= 2 samples with matching sizes");
          }
          if (!(k.times.front() >= 0.0)) {
            throw DomainError("tabulated kernel times must be nonnegative");
          }
          for (std::size_t i = 0; i + 1 < k.times.size(); ++i) {
            if (!(k.times[i] < k.times[i + 1])) {
              throw DomainError("tabulated kernel times must be increasing");
            }
          }
          for (double v : k.values) {
            if (!std::isfinite(v) || v < 0.0) {
              throw DomainError(
                  "tabulated kernel values must be finite and nonnegative");
            }
          }
        }
      },
      kernel);
}

namespace detail {
inline double tabulated_value(const TabulatedKernel& k, double t) {
  if (t <= k.times.front()) return k.values.front();
  if (t >= k.times.back()) return k.values.back();
  const auto it = std::upper_bound(k.times.begin(), k.times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - k.times.begin());
  const double w = (t - k.times[i - 1]) / (k.times[i] - k.times[i - 1]);
  return k.values[i - 1] + w * (k.values[i] - k.values[i - 1]);
}

/// Trapezoid of f over [lo,hi] on the tabulated grid refined `refine`-fold,
/// with `extra_nodes` merged in (curve breakpoints and the like).
template <class F>
double tabulated_trapezoid(const std::vector<double>& grid_times, double lo,
                           double hi, int refine, std::vector<double> extra_nodes,
                           F&& f) {
  if (!(hi > lo)) return 0.0;
  std::vector<double> nodes;
  nodes.push_back(lo);
  for (double t : grid_times) {
    if (t > lo && t < hi) nodes.push_back(t);
  }
  for (double t : extra_nodes) {
    if (t > lo && t < hi) nodes.push_back(t);
  }
  nodes.push_back(hi);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double h = (nodes[i + 1] - nodes[i]) / refine;
    double prev = f(nodes[i]);
    for (int j = 1; j <= refine; ++j) {
      const double cur = f(nodes[i] + j * h);
      acc += 0.5 * h * (prev + cur);
      prev = cur;
    }
  }
  return acc;
}
}  // namespace detail

inline double kernel_value(const KernelSpec& kernel, double t) {
  return std::visit(
      [t](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ExponentialKernel>) {
          return k.a * std::exp(-k.b * t);
        } else if constexpr (std::is_same_v<K, PowerKernel>) {
          return k.a * std::pow(t, k.hurst - 0.5);
        } else {
          return detail::tabulated_value(k, t);
        }
      },
      kernel);
}

/// Antiderivative K(x) = \int_0^x k(w) dw.
inline double kernel_integral(const KernelSpec& kernel, double x) {
  if (!(x >= 0.0)) throw DomainError("kernel_integral: x must be nonnegative");
  return std::visit(
      [x](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ExponentialKernel>) {
          return k.a * (-std::expm1(-k.b * x)) / k.b;
        } else if constexpr (std::is_same_v<K, PowerKernel>) {
          const double p = k.hurst + 0.5;
          return k.a * std::pow(x, p) / p;
        } else {
          return detail::tabulated_trapezoid(
              k.times, 0.0, x, 8, {},
              [&k](double t) { return detail::tabulated_value(k, t); });
        }
      },
      kernel);
}

/// \int_0^t k(w)^2 dw — the log-variance compensator building block.
inline double kernel_sq_integral(const KernelSpec& kernel, double t) {
  if (!(t >= 0.0)) throw DomainError("kernel_sq_integral: t must be nonnegative");
  return std::visit(
      [t](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ExponentialKernel>) {
          return k.a * k.a * (-std::expm1(-2.0 * k.b * t)) / (2.0 * k.b);
        } else if constexpr (std::is_same_v<K, PowerKernel>) {
          return k.a * k.a * std::pow(t, 2.0 * k.hurst) / (2.0 * k.hurst);
        } else {
          return detail::tabulated_trapezoid(k.times, 0.0, t, 8, {},
                                             [&k](double w) {
                                               const double v =
                                                   detail::tabulated_value(k, w);
                                               return v * v;
                                             });
        }
      },
      kernel);
}

// ---------------------------------------------------------------------------
// Forward variance curves
// ---------------------------------------------------------------------------

struct FlatCurve {
  double v0 = 0.0;
};

/// values[i] holds on [breakpoints[i], breakpoints[i+1]); right-continuous.
struct PiecewiseConstantCurve {
  std::vector<double> breakpoints;
  std::vector<double> values;
};

using ForwardVarianceCurve = std::variant<FlatCurve, PiecewiseConstantCurve>;

inline void validate_curve(const ForwardVarianceCurve& curve, double horizon) {
  std::visit(
      [horizon](const auto& c) {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, FlatCurve>) {
          if (!(c.v0 > 0.0)) throw DomainError("curve v0 must be positive");
        } else {
          if (c.breakpoints.size() != c.values.size() + 1 || c.values.empty()) {
            throw DomainError(
                "piecewise curve needs breakpoints.size() == values.size()+1");
          }
          if (c.breakpoints.front() != 0.0) {
            throw DomainError("piecewise curve breakpoints must start at 0");
          }
          for (std::size_t i = 0; i + 1 < c.breakpoints.size(); ++i) {
            if (!(c.breakpoints[i] < c.breakpoints[i + 1])) {
              throw DomainError("piecewise curve breakpoints must be increasing");
            }
          }
          if (c.breakpoints.back() < horizon) {
            throw DomainError("piecewise curve must cover [0, horizon]");
          }
          for (double v : c.values) {
            if (!(v > 0.0)) {
              throw DomainError("piecewise curve values must be positive");
            }
          }
        }
      },
      curve);
}

inline double curve_value(const ForwardVarianceCurve& curve, double t) {
  return std::visit(
      [t](const auto& c) -> double {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, FlatCurve>) {
          return c.v0;
        } else {
          if (t <= c.breakpoints.front()) return c.values.front();
          if (t >= c.breakpoints.back()) return c.values.back();
          const auto it =
              std::upper_bound(c.breakpoints.begin(), c.breakpoints.end(), t);
          return c.values[static_cast<std::size_t>(it - c.breakpoints.begin()) -
                          1];
        }
      },
      curve);
}

/// \int_0^t V_0(u) du, exact for both curve families.
inline double curve_integral(const ForwardVarianceCurve& curve, double t) {
  return std::visit(
      [t](const auto& c) -> double {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, FlatCurve>) {
          return c.v0 * t;
        } else {
          double acc = 0.0;
          for (std::size_t i = 0; i < c.values.size(); ++i) {
            const double lo = c.breakpoints[i];
            const double hi = std::min(c.breakpoints[i + 1], t);
            if (hi <= lo) break;
            acc += c.values[i] * (hi - lo);
          }
          if (t > c.breakpoints.back()) {
            acc += c.values.back() * (t - c.breakpoints.back());
          }
          return acc;
        }
      },
      curve);
}

/// Interior discontinuity positions of the curve inside (lo, hi).
inline std::vector<double> curve_kinks(const ForwardVarianceCurve& curve,
                                       double lo, double hi) {
  std::vector<double> out;
  if (const auto* pc = std::get_if<PiecewiseConstantCurve>(&curve)) {
    for (double b : pc->breakpoints) {
      if (b > lo && b < hi) out.push_back(b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

struct Factor {
  double rho = 0.0;
  KernelSpec kernel;
};

struct ModelSpec {
  double spot = 0.0;
  double horizon = 0.0;
  double eps = 0.0;
  ForwardVarianceCurve curve;
  std::vector<Factor> factors;
};

inline double rho_squared_sum(const ModelSpec& m) {
  double acc = 0.0;
  for (const Factor& f : m.factors) acc += f.rho * f.rho;
  return acc;
}

inline void validate_model(const ModelSpec& m) {
  if (!(m.spot > 0.0)) throw DomainError("model spot must be positive");
  if (!(m.horizon > 0.0)) throw DomainError("model horizon must be positive");
  // eps = 0 is the exact Black–Scholes degenerate case and is allowed.
  if (!(m.eps >= 0.0)) throw DomainError("model eps must be nonnegative");
  if (m.factors.empty()) throw DomainError("model needs at least one factor");
  validate_curve(m.curve, m.horizon);
  for (const Factor& f : m.factors) validate_kernel(f.kernel);
  // == 1 is allowed: the residual Brownian weight sqrt(1 - sum rho^2) is then
  // exactly zero and the price driver is spanned by the factor drivers.
  if (!(rho_squared_sum(m) <= 1.0)) {
    throw DomainError("model requires sum of rho_i^2 <= 1");
  }
}

/// v = \int_0^T V_0(t) dt — the base total variance of the horizon.
inline double total_base_variance(const ModelSpec& m) {
  return curve_integral(m.curve, m.horizon);
}

namespace detail {

/// Inner covariance integral \int_0^{T-s} V_0(s+w) k(w) dw for one factor.
inline double cross_covariance_inner(const ModelSpec& m, const KernelSpec& kern,
                                     double s, double rel_tol) {
  const double len = m.horizon - s;
  if (!(len > 0.0)) return 0.0;
  std::vector<double> kinks;  // curve breakpoints shifted into w coordinates
  for (double b : curve_kinks(m.curve, s, m.horizon)) kinks.push_back(b - s);

  if (const auto* pk = std::get_if<PowerKernel>(&kern)) {
    return integrate_power_singularity(
               [&](double w) { return pk->a * curve_value(m.curve, s + w); },
               pk->hurst, len, rel_tol, std::move(kinks))
        .value;
  }
  if (const auto* tk = std::get_if<TabulatedKernel>(&kern)) {
    return tabulated_trapezoid(tk->times, 0.0, len, 8, std::move(kinks),
                               [&](double w) {
                                 return tabulated_value(*tk, w) *
                                        curve_value(m.curve, s + w);
                               });
  }
  return integrate(
             [&](double w) {
               return kernel_value(kern, w) * curve_value(m.curve, s + w);
             },
             0.0, len, rel_tol, std::move(kinks))
      .value;
}

}  // namespace detail

/// Limit covariance E[XY] between the normalized price martingale and the
/// integrated-variance fluctuation:
///   E[XY] = v^{-1/2} \int_0^T sqrt(V_0(s)) \int_s^T V_0(u) sum_i rho_i k_i(u-s) du ds.
/// Nested adaptive quadrature; the inner integral runs 10x tighter, and power
/// kernels go through the singularity-removing substitution.
inline double cross_covariance(const ModelSpec& m, double rel_tol = 1e-9) {
  validate_model(m);
  const double v = total_base_variance(m);
  const double inner_tol = rel_tol / 10.0;
  double acc = 0.0;
  for (const Factor& f : m.factors) {
    if (f.rho == 0.0) continue;
    QuadResult outer = integrate(
        [&](double s) {
          return std::sqrt(curve_value(m.curve, s)) *
                 detail::cross_covariance_inner(m, f.kernel, s, inner_tol);
        },
        0.0, m.horizon, rel_tol, curve_kinks(m.curve, 0.0, m.horizon));
    acc += f.rho * outer.value;
  }
  return acc / std::sqrt(v);
}

/// Closed form of cross_covariance for a flat curve with exponential or power
/// kernels (sums over factors); empty otherwise.
inline std::optional<double> cross_covariance_closed_form(const ModelSpec& m) {
  validate_model(m);
  const auto* flat = std::get_if<FlatCurve>(&m.curve);
  if (flat == nullptr) return std::nullopt;
  const double v0 = flat->v0;
  const double T = m.horizon;
  double acc = 0.0;
  for (const Factor& f : m.factors) {
    if (std::holds_alternative<TabulatedKernel>(f.kernel)) return std::nullopt;
    if (const auto* pk = std::get_if<PowerKernel>(&f.kernel)) {
      const double h = pk->hurst;
      acc += f.rho * pk->a * v0 * std::pow(T, h + 1.0) /
             ((h + 0.5) * (h + 1.5));
    } else {
      const auto& ek = std::get<ExponentialKernel>(f.kernel);
      acc += f.rho * v0 / std::sqrt(T) * (ek.a / ek.b) *
             (T - (-std::expm1(-ek.b * T)) / ek.b);
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Conditional mean m(x) = E[Y | X = x]
// ---------------------------------------------------------------------------

/// Gaussian-limit case: m(x) = E[XY] * x.
struct AffineMean {
  double exy = 0.0;
};

/// User-supplied conditional mean. Derivatives default to central differences
/// (step 1e-5). Construction verifies the decay the expansion needs:
/// m(x)phi(x) -> 0 and (m phi)'(x) -> 0, checked at |x| = 10 against 1e-12.
class CustomMean {
 public:
  using Fn = std::function<double(double)>;

  explicit CustomMean(Fn m, Fn dm = {}, Fn d2m = {}) : m_(std::move(m)) {
    if (!m_) throw DomainError("custom mean: m(x) must be callable");
    constexpr double h = 1e-5;
    if (dm) {
      dm_ = std::move(dm);
    } else {
      dm_ = [f = m_](double x) { return (f(x + h) - f(x - h)) / (2.0 * h); };
    }
    if (d2m) {
      d2m_ = std::move(d2m);
    } else {
      d2m_ = [f = m_](double x) {
        return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
      };
    }
    for (double x : {-10.0, 10.0}) {
      const double phi = norm_pdf(x);
      const double g = m_(x) * phi;
      const double gp = (dm_(x) - x * m_(x)) * phi;
      if (std::fabs(g) >= 1e-12 || std::fabs(gp) >= 1e-12) {
        throw DomainError(
            "custom mean violates the decay boundary condition at |x| = 10");
      }
    }
  }

  double m(double x) const { return m_(x); }
  double dm(double x) const { return dm_(x); }
  double d2m(double x) const { return d2m_(x); }

 private:
  Fn m_, dm_, d2m_;
};

using ConditionalMean = std::variant<AffineMean, CustomMean>;

inline double mean_value(const ConditionalMean& cm, double x) {
  if (const auto* a = std::get_if<AffineMean>(&cm)) return a->exy * x;
  return std::get<CustomMean>(cm).m(x);
}

inline double mean_d1(const ConditionalMean& cm, double x) {
  if (const auto* a = std::get_if<AffineMean>(&cm)) return a->exy;
  return std::get<CustomMean>(cm).dm(x);
}

inline double mean_d2(const ConditionalMean& cm, double x) {
  if (std::holds_alternative<AffineMean>(cm)) return 0.0;
  return std::get<CustomMean>(cm).d2m(x);
}

// ---------------------------------------------------------------------------
// Expansion inputs
// ---------------------------------------------------------------------------

/// The three scalars the first-order expansion needs.
struct ExpansionInputs {
  double v_eps = 0.0;  // base total variance v
  double exy = 0.0;    // limit covariance E[XY]
  double eps = 0.0;    // vol-of-vol
};

inline ExpansionInputs expansion_inputs(const ModelSpec& m) {
  validate_model(m);
  const double v = total_base_variance(m);
  if (!(v > 0.0)) throw NumericError("expansion_inputs: v must be positive");
  const std::optional<double> closed = cross_covariance_closed_form(m);
  return {v, closed ? *closed : cross_covariance(m), m.eps};
}

}  // namespace volexp
