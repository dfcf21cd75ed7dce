#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "volexp/bs.hpp"
#include "volexp/errors.hpp"
#include "volexp/expansion.hpp"
#include "volexp/model.hpp"
#include "volexp/quadrature.hpp"

namespace volexp {

struct SimGrid {
  int n_steps = 0;
  double horizon = 0.0;
  double dt() const { return horizon / n_steps; }
  double time(int j) const { return j * dt(); }
};

inline void validate_grid(const SimGrid& g) {
  if (g.n_steps < 2) throw DomainError("sim grid needs at least 2 steps");
  if (!(g.horizon > 0.0)) throw DomainError("sim grid horizon must be positive");
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t n_pairs = 0;  // independent sampling units (antithetic pairs)
  std::uint64_t seed = 0;
};

/// Terminal state of a simulated batch; antithetic halves of pair i sit at
/// indices 2i and 2i+1.
struct PathBundle {
  std::vector<double> terminal_log_price;
  std::vector<double> integrated_variance;  // trapezoid of V over the grid
  std::uint64_t seed = 0;
};

namespace detail {

/// splitmix64 finalizer over (seed, block) — the documented stream-splitting
/// rule: every path block draws from mt19937_64(mix_seed(seed, block)).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t block) {
  std::uint64_t z = seed + (block + 1) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Box–Muller normals. std::normal_distribution's algorithm is
/// implementation-defined; this keeps streams identical across standard
/// libraries, which the reproducibility contract needs.
inline void fill_standard_normal(std::mt19937_64& rng, double* out,
                                 std::ptrdiff_t n) {
  constexpr double two_pi = 6.2831853071795864769;
  std::ptrdiff_t i = 0;
  while (i < n) {
    const double u1 = ((rng() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = (rng() >> 11) * 0x1.0p-53;        // [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i++] = r * std::cos(two_pi * u2);
    if (i < n) out[i++] = r * std::sin(two_pi * u2);
  }
}

}  // namespace detail

/// Cov(M_{t_a}, M_{t_b}) = \int_0^{t_min} k(t_a-s) k(t_b-s) ds for one factor,
/// written as \int_0^{t_min} k(w) k(w+delta) dw. Closed forms where they
/// exist; the power off-diagonal goes through the singularity substitution.
inline double kernel_autocovariance(const KernelSpec& kern, double t_min,
                                    double delta) {
  if (!(t_min >= 0.0) || !(delta >= 0.0)) {
    throw DomainError("kernel_autocovariance: negative time argument");
  }
  if (t_min == 0.0) return 0.0;
  if (const auto* ek = std::get_if<ExponentialKernel>(&kern)) {
    return ek->a * ek->a * std::exp(-ek->b * delta) *
           (-std::expm1(-2.0 * ek->b * t_min)) / (2.0 * ek->b);
  }
  if (const auto* pk = std::get_if<PowerKernel>(&kern)) {
    const double h = pk->hurst;
    if (delta == 0.0) {
      return pk->a * pk->a * std::pow(t_min, 2.0 * h) / (2.0 * h);
    }
    return integrate_power_singularity(
               [&](double w) {
                 return pk->a * pk->a * std::pow(w + delta, h - 0.5);
               },
               h, t_min, 1e-11)
        .value;
  }
  const auto& tk = std::get<TabulatedKernel>(kern);
  std::vector<double> shifted;  // kinks of k(w+delta) in w coordinates
  for (double t : tk.times) {
    if (t > delta) shifted.push_back(t - delta);
  }
  return detail::tabulated_trapezoid(
      tk.times, 0.0, t_min, 8, std::move(shifted), [&](double w) {
        return detail::tabulated_value(tk, w) *
               detail::tabulated_value(tk, w + delta);
      });
}

/// Joint covariance of (M_{t_1..t_n}, dW_1..dW_n) for a single factor, where
/// M_t = \int_0^t k(t-s) dW_s and dW_j = W(t_j) - W(t_{j-1}).
inline Eigen::MatrixXd factor_driver_covariance(const KernelSpec& kern,
                                                const SimGrid& grid) {
  validate_grid(grid);
  const int n = grid.n_steps;
  const double dt = grid.dt();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (int j = 1; j <= n; ++j) {
    const double tj = j * dt;
    for (int l = j; l <= n; ++l) {
      const double c = kernel_autocovariance(kern, tj, (l - j) * dt);
      cov(j - 1, l - 1) = c;
      cov(l - 1, j - 1) = c;
    }
    // Cov(M_{t_j}, dW_l) = K(t_j - t_{l-1}) - K(t_j - min(t_l, t_j)) while the
    // increment starts before t_j, with K the kernel antiderivative.
    for (int l = 1; l <= n; ++l) {
      const double t_lo = (l - 1) * dt;
      if (t_lo >= tj) break;
      const double t_hi = std::min(l * dt, tj);
      const double c = kernel_integral(kern, tj - t_lo) -
                       kernel_integral(kern, tj - t_hi);
      cov(j - 1, n + l - 1) = c;
      cov(n + l - 1, j - 1) = c;
    }
  }
  for (int l = 0; l < n; ++l) cov(n + l, n + l) = dt;
  return cov;
}

/// Full driver covariance across factors (block diagonal: the W^i are
/// independent). Mostly useful for inspection and tests; the simulator
/// factorizes per-factor blocks directly.
inline Eigen::MatrixXd build_driver_covariance(const ModelSpec& model,
                                               const SimGrid& grid) {
  validate_model(model);
  const int n = grid.n_steps;
  const int nf = static_cast<int>(model.factors.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2 * n * nf, 2 * n * nf);
  for (int f = 0; f < nf; ++f) {
    cov.block(2 * n * f, 2 * n * f, 2 * n, 2 * n) =
        factor_driver_covariance(model.factors[f].kernel, grid);
  }
  return cov;
}

namespace detail {

/// Lower Cholesky factor with an escalating diagonal jitter (absolute, capped
/// at 1e-12) to absorb the PSD matrix's trailing-eigenvalue rounding.
inline Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& cov) {
  for (double jitter : {0.0, 1e-15, 1e-14, 1e-13, 1e-12}) {
    Eigen::MatrixXd work = cov;
    if (jitter > 0.0) {
      work.diagonal().array() += jitter;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) {
      return llt.matrixL();
    }
  }
  throw NumericError(
      "driver covariance factorization failed (jitter up to 1e-12)");
}

inline constexpr int kBlockPairs = 512;

}  // namespace detail

/// One block's worth of simulated antithetic pairs for one eps value.
/// `st_a/iv_a` belong to the + halves, `st_b/iv_b` to the mirrored halves
/// (or to independent paths when antithetics are off).
struct PairBatch {
  int eps_index = 0;
  std::int64_t first_pair = 0;
  int count = 0;
  const double* st_a = nullptr;
  const double* st_b = nullptr;
  const double* iv_a = nullptr;
  const double* iv_b = nullptr;
};

/// Core simulation loop. Draws the exact joint law of the Volterra values and
/// Brownian increments per factor (covariance factorization), forms
///   V_t = V_0(t) exp(eps * sum_i M^i_t - eps^2/2 * sum_i \int_0^t k_i^2),
/// and evolves log S by Euler with left-point variance and an independent
/// orthogonal Brownian component. The same draws serve every eps in
/// `eps_list` (common random numbers), and antithetic halves negate the whole
/// Gaussian vector. Blocks of 512 pairs each use the substream
/// mt19937_64(mix_seed(seed, block)) and are consumed in fixed order, so a
/// given (model, grid, n_pairs, seed) is bit-reproducible on one build.
template <class Consumer>
void for_each_pair_batch(const ModelSpec& model, const SimGrid& grid,
                         std::int64_t n_pairs, std::uint64_t seed,
                         const std::vector<double>& eps_list, bool antithetic,
                         Consumer&& consume) {
  validate_model(model);
  validate_grid(grid);
  if (n_pairs < 1) throw DomainError("simulation needs at least one pair");
  if (eps_list.empty()) throw DomainError("simulation needs at least one eps");
  for (double e : eps_list) {
    if (!(e >= 0.0)) throw DomainError("simulation eps values must be >= 0");
  }

  const int n = grid.n_steps;
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  const int nf = static_cast<int>(model.factors.size());
  const double rho_perp = std::sqrt(1.0 - rho_squared_sum(model));

  // Per-factor upper factors U = L^T so that (Z^T U) rows are L*z per path.
  std::vector<Eigen::MatrixXd> upper;
  upper.reserve(nf);
  for (const Factor& f : model.factors) {
    upper.push_back(detail::cholesky_with_jitter(
                        factor_driver_covariance(f.kernel, grid))
                        .transpose());
  }

  Eigen::ArrayXd v0_grid(n + 1), comp_grid(n + 1);
  for (int j = 0; j <= n; ++j) {
    const double tj = grid.time(j);
    v0_grid[j] = curve_value(model.curve, tj);
    double c = 0.0;
    for (const Factor& f : model.factors) c += kernel_sq_integral(f.kernel, tj);
    comp_grid[j] = c;
  }

  const int B = detail::kBlockPairs;
  // Paths-by-component layout keeps every per-time slice contiguous.
  Eigen::MatrixXd z(B, 2 * n), g(B, 2 * n);
  Eigen::ArrayXXd m_sum(B, n), w_mix(B, n), z_perp(B, n);
  Eigen::ArrayXXd m_sum2, w_mix2, z_perp2;
  if (!antithetic) {
    m_sum2.resize(B, n);
    w_mix2.resize(B, n);
    z_perp2.resize(B, n);
  }
  Eigen::ArrayXd v_prev(B), v_cur(B), log_s(B), iv(B);
  Eigen::ArrayXd st_a(B), st_b(B), iv_a(B), iv_b(B);

  const std::int64_t n_blocks = (n_pairs + B - 1) / B;
  for (std::int64_t block = 0; block < n_blocks; ++block) {
    const std::int64_t first = block * B;
    const int count = static_cast<int>(std::min<std::int64_t>(B, n_pairs - first));
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(block)));

    auto draw_half = [&](Eigen::ArrayXXd& ms, Eigen::ArrayXXd& wm,
                         Eigen::ArrayXXd& zp) {
      for (int f = 0; f < nf; ++f) {
        detail::fill_standard_normal(rng, z.data(), 2 * n * B);
        g.noalias() = z * upper[f];
        if (f == 0) {
          ms = g.leftCols(n).array();
          wm = model.factors[0].rho * g.rightCols(n).array();
        } else {
          ms += g.leftCols(n).array();
          wm += model.factors[f].rho * g.rightCols(n).array();
        }
      }
      detail::fill_standard_normal(rng, zp.data(), n * B);
    };
    draw_half(m_sum, w_mix, z_perp);
    if (!antithetic) draw_half(m_sum2, w_mix2, z_perp2);

    for (std::size_t e = 0; e < eps_list.size(); ++e) {
      const double eps = eps_list[e];
      for (int half = 0; half < 2; ++half) {
        const bool mirrored = antithetic && half == 1;
        const double sgn = mirrored ? -1.0 : 1.0;
        const Eigen::ArrayXXd& ms = (antithetic || half == 0) ? m_sum : m_sum2;
        const Eigen::ArrayXXd& wm = (antithetic || half == 0) ? w_mix : w_mix2;
        const Eigen::ArrayXXd& zp = (antithetic || half == 0) ? z_perp : z_perp2;

        log_s.setConstant(std::log(model.spot));
        iv.setZero();
        v_prev.setConstant(v0_grid[0]);  // M_{t_0} = 0: V starts on the curve
        for (int j = 1; j <= n; ++j) {
          v_cur = v0_grid[j] *
                  (sgn * eps * ms.col(j - 1) - 0.5 * eps * eps * comp_grid[j])
                      .exp();
          log_s += -0.5 * dt * v_prev +
                   v_prev.sqrt() * sgn *
                       (wm.col(j - 1) + rho_perp * sqrt_dt * zp.col(j - 1));
          iv += 0.5 * dt * (v_prev + v_cur);
          v_prev = v_cur;
        }
        if (half == 0) {
          st_a = log_s.exp();
          iv_a = iv;
        } else {
          st_b = log_s.exp();
          iv_b = iv;
        }
      }
      consume(PairBatch{static_cast<int>(e), first, count, st_a.data(),
                        st_b.data(), iv_a.data(), iv_b.data()});
    }
  }
}

/// Simulates 2*n_pairs paths of the model at its own eps and returns terminal
/// log-prices plus trapezoid integrated variance (pair halves adjacent).
inline PathBundle simulate_paths(const ModelSpec& model, const SimGrid& grid,
                                 std::int64_t n_pairs, std::uint64_t seed,
                                 bool antithetic = true) {
  PathBundle bundle;
  bundle.seed = seed;
  bundle.terminal_log_price.resize(2 * n_pairs);
  bundle.integrated_variance.resize(2 * n_pairs);
  for_each_pair_batch(
      model, grid, n_pairs, seed, {model.eps}, antithetic,
      [&](const PairBatch& pb) {
        for (int i = 0; i < pb.count; ++i) {
          const std::int64_t p = pb.first_pair + i;
          bundle.terminal_log_price[2 * p] = std::log(pb.st_a[i]);
          bundle.terminal_log_price[2 * p + 1] = std::log(pb.st_b[i]);
          bundle.integrated_variance[2 * p] = pb.iv_a[i];
          bundle.integrated_variance[2 * p + 1] = pb.iv_b[i];
        }
      });
  return bundle;
}

/// MC put price E[(K - S_T)+] with antithetic pairs as the sampling unit:
/// std_error = std(pair means) / sqrt(n_pairs).
inline McEstimate mc_put(const ModelSpec& model, double strike,
                         const SimGrid& grid, std::int64_t n_pairs,
                         std::uint64_t seed, bool antithetic = true) {
  if (n_pairs < 2) throw DomainError("mc_put needs at least 2 pairs");
  double sum = 0.0, sum_sq = 0.0;
  for_each_pair_batch(model, grid, n_pairs, seed, {model.eps}, antithetic,
                      [&](const PairBatch& pb) {
                        for (int i = 0; i < pb.count; ++i) {
                          const double pm =
                              0.5 * (std::max(strike - pb.st_a[i], 0.0) +
                                     std::max(strike - pb.st_b[i], 0.0));
                          sum += pm;
                          sum_sq += pm * pm;
                        }
                      });
  const double n = static_cast<double>(n_pairs);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), n_pairs, seed};
}

/// Implied total variance of the MC put with a delta-method standard error
/// (se_price / dp_dt). Empty when the MC price leaves the invertible band.
inline std::optional<McEstimate> mc_implied_variance(const ModelSpec& model,
                                                     double strike,
                                                     const SimGrid& grid,
                                                     std::int64_t n_pairs,
                                                     std::uint64_t seed) {
  const McEstimate price = mc_put(model, strike, grid, n_pairs, seed);
  const double intrinsic = std::max(strike - model.spot, 0.0);
  if (!(price.mean > intrinsic) || !(price.mean < strike)) return std::nullopt;
  const double v_hat = implied_total_variance(price.mean, model.spot, strike);
  const double slope = dp_dt({model.spot, strike, v_hat});
  return McEstimate{v_hat, price.std_error / slope, n_pairs, seed};
}

struct ConvergenceRow {
  double eps = 0.0;
  double p_mc = 0.0;
  double std_error = 0.0;
  double p_exp = 0.0;
  double err = 0.0;
  double err_over_eps = 0.0;  // NaN on eps = 0 rows
  double ratio = 0.0;         // err / previous err; NaN on the first row
};

/// Prices the put across eps values with common random numbers (eps enters
/// only analytically, the Gaussian draws are shared) and compares against the
/// first-order expansion. err/eps -> 0 is the expansion's o(eps) claim; with
/// an O(eps^2) remainder the ratio column settles near 1/4 per eps-halving.
inline std::vector<ConvergenceRow> convergence_study(
    const ModelSpec& model, double strike, const std::vector<double>& eps_list,
    const SimGrid& grid, std::int64_t n_pairs, std::uint64_t seed) {
  if (n_pairs < 2) throw DomainError("convergence_study needs >= 2 pairs");
  for (std::size_t i = 0; i + 1 < eps_list.size(); ++i) {
    if (!(eps_list[i + 1] < eps_list[i])) {
      throw DomainError("convergence_study: eps_list must be decreasing");
    }
  }

  std::vector<double> sum(eps_list.size(), 0.0), sum_sq(eps_list.size(), 0.0);
  for_each_pair_batch(model, grid, n_pairs, seed, eps_list, true,
                      [&](const PairBatch& pb) {
                        double s = 0.0, s2 = 0.0;
                        for (int i = 0; i < pb.count; ++i) {
                          const double pm =
                              0.5 * (std::max(strike - pb.st_a[i], 0.0) +
                                     std::max(strike - pb.st_b[i], 0.0));
                          s += pm;
                          s2 += pm * pm;
                        }
                        sum[pb.eps_index] += s;
                        sum_sq[pb.eps_index] += s2;
                      });

  ExpansionInputs inputs = expansion_inputs(model);
  const ConditionalMean mean = AffineMean{inputs.exy};
  const double n = static_cast<double>(n_pairs);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<ConvergenceRow> rows;
  rows.reserve(eps_list.size());
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    ConvergenceRow r;
    r.eps = eps_list[i];
    r.p_mc = sum[i] / n;
    const double var =
        std::max(0.0, (sum_sq[i] - n * r.p_mc * r.p_mc) / (n - 1.0));
    r.std_error = std::sqrt(var / n);
    ExpansionInputs in_eps = inputs;
    in_eps.eps = r.eps;
    r.p_exp = put_expansion(model.spot, in_eps, mean, strike).form_a;
    r.err = std::fabs(r.p_mc - r.p_exp);
    r.err_over_eps = r.eps > 0.0 ? r.err / r.eps : nan;
    r.ratio = i > 0 ? r.err / rows[i - 1].err : nan;
    rows.push_back(r);
  }
  return rows;
}

struct ConvergenceVerdict {
  bool pass = false;
  std::string reason;
};

/// PASS = err/eps strictly decreasing over consecutive eps > 0 rows, and the
/// final row within max(3*std_error, half the previous err) — within 3 sigma
/// alone when the final row is eps = 0.
inline ConvergenceVerdict assess_convergence(
    const std::vector<ConvergenceRow>& rows) {
  if (rows.empty()) return {false, "no rows"};
  std::ostringstream why;

  const ConvergenceRow* prev = nullptr;
  for (const ConvergenceRow& r : rows) {
    if (!(r.eps > 0.0)) continue;
    if (prev != nullptr && !(r.err_over_eps < prev->err_over_eps)) {
      why << "err/eps not strictly decreasing at eps=" << r.eps << " ("
          << prev->err_over_eps << " -> " << r.err_over_eps << ")";
      const double sigma = 3.0 * (prev->std_error + r.std_error);
      if (sigma > std::fabs(prev->err - r.err)) {
        why << "; MC noise dominates this step (3*(se+se)=" << sigma
            << ") — increase paths";
      }
      return {false, why.str()};
    }
    prev = &r;
  }

  const ConvergenceRow& last = rows.back();
  double budget = 3.0 * last.std_error;
  if (last.eps > 0.0 && rows.size() >= 2) {
    const ConvergenceRow& before = rows[rows.size() - 2];
    if (before.eps > 0.0) budget = std::max(budget, 0.5 * before.err);
  }
  if (!(last.err <= budget)) {
    why << "final err " << last.err << " exceeds budget " << budget;
    if (3.0 * last.std_error >= budget) {
      why << " (sigma-dominated bound — increase paths)";
    }
    return {false, why.str()};
  }
  return {true, "err/eps decreasing and final err within budget"};
}

struct ConditionalIvPoint {
  double strike = 0.0;
  double regression_iv = 0.0;      // Nadaraya–Watson E[\int V | S_T = K]
  double regression_se = 0.0;      // from the kernel weights
  double ess = 0.0;                // Kish effective sample size in the window
  bool low_ess = false;            // ess < 100: too sparse to trust
  std::optional<McEstimate> mc_iv; // inverted MC put, empty when off-bounds
  double expansion_iv = 0.0;       // first-order v_hat(K)
  double bandwidth = 0.0;
};

/// Side-by-side report of the conditional-expectation reading of the smile:
/// kernel regression of integrated variance on the terminal price at each
/// strike versus the MC implied variance and the first-order formula.
/// Bandwidth defaults to Silverman's rule on log terminal price.
inline std::vector<ConditionalIvPoint> conditional_iv_experiment(
    const ModelSpec& model, const std::vector<double>& strikes,
    std::optional<double> bandwidth, const SimGrid& grid, std::int64_t n_pairs,
    std::uint64_t seed) {
  if (n_pairs < 2) throw DomainError("conditional_iv_experiment needs pairs");
  for (double k : strikes) {
    if (!(k > 0.0)) throw DomainError("strikes must be positive");
  }
  if (bandwidth.has_value() && !(*bandwidth > 0.0)) {
    throw DomainError("bandwidth must be positive");
  }

  const std::size_t n_strikes = strikes.size();
  std::vector<double> x;  // log terminal price
  std::vector<double> y;  // integrated variance
  x.reserve(2 * n_pairs);
  y.reserve(2 * n_pairs);
  std::vector<double> put_sum(n_strikes, 0.0), put_sum_sq(n_strikes, 0.0);

  for_each_pair_batch(
      model, grid, n_pairs, seed, {model.eps}, true, [&](const PairBatch& pb) {
        for (int i = 0; i < pb.count; ++i) {
          x.push_back(std::log(pb.st_a[i]));
          x.push_back(std::log(pb.st_b[i]));
          y.push_back(pb.iv_a[i]);
          y.push_back(pb.iv_b[i]);
          for (std::size_t s = 0; s < n_strikes; ++s) {
            const double pm =
                0.5 * (std::max(strikes[s] - pb.st_a[i], 0.0) +
                       std::max(strikes[s] - pb.st_b[i], 0.0));
            put_sum[s] += pm;
            put_sum_sq[s] += pm * pm;
          }
        }
      });

  const double n_obs = static_cast<double>(x.size());
  double h;
  if (bandwidth.has_value()) {
    h = *bandwidth;
  } else {
    double mu = 0.0;
    for (double xi : x) mu += xi;
    mu /= n_obs;
    double ss = 0.0;
    for (double xi : x) ss += (xi - mu) * (xi - mu);
    const double sd = std::sqrt(ss / (n_obs - 1.0));
    h = 1.06 * sd * std::pow(n_obs, -0.2);  // Silverman
  }

  ExpansionInputs inputs = expansion_inputs(model);
  const ConditionalMean cm = AffineMean{inputs.exy};
  const double n = static_cast<double>(n_pairs);

  std::vector<ConditionalIvPoint> out;
  out.reserve(n_strikes);
  for (std::size_t s = 0; s < n_strikes; ++s) {
    ConditionalIvPoint pt;
    pt.strike = strikes[s];
    pt.bandwidth = h;
    pt.expansion_iv =
        implied_variance_expansion(model.spot, inputs, cm, strikes[s])
            .implied_total_variance;

    const double x0 = std::log(strikes[s]);
    double w_sum = 0.0, w_sq_sum = 0.0, wy_sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = (x[i] - x0) / h;
      const double w = std::exp(-0.5 * u * u);
      w_sum += w;
      w_sq_sum += w * w;
      wy_sum += w * y[i];
    }
    if (w_sum > 0.0) {
      pt.regression_iv = wy_sum / w_sum;
      pt.ess = w_sum * w_sum / w_sq_sum;
      double resid = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = (x[i] - x0) / h;
        const double w = std::exp(-0.5 * u * u);
        const double d = y[i] - pt.regression_iv;
        resid += w * w * d * d;
      }
      pt.regression_se = std::sqrt(resid) / w_sum;
    } else {
      pt.regression_iv = std::numeric_limits<double>::quiet_NaN();
      pt.regression_se = std::numeric_limits<double>::quiet_NaN();
      pt.ess = 0.0;
    }
    pt.low_ess = pt.ess < 100.0;

    const double price = put_sum[s] / n;
    const double var =
        std::max(0.0, (put_sum_sq[s] - n * price * price) / (n - 1.0));
    const double price_se = std::sqrt(var / n);
    const double intrinsic = std::max(strikes[s] - model.spot, 0.0);
    if (price > intrinsic && price < strikes[s]) {
      const double v_hat = implied_total_variance(price, model.spot, strikes[s]);
      const double slope = dp_dt({model.spot, strikes[s], v_hat});
      pt.mc_iv = McEstimate{v_hat, price_se / slope, n_pairs, seed};
    }
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace volexp
