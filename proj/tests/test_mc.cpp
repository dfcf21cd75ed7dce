#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "volexp/bs.hpp"
#include "volexp/errors.hpp"
#include "volexp/expansion.hpp"
#include "volexp/mc.hpp"
#include "volexp/model.hpp"

using namespace volexp;

namespace {

ModelSpec reference_model(double eps = 0.2) {
  ModelSpec m;
  m.spot = 100.0;
  m.horizon = 1.0;
  m.eps = eps;
  m.curve = FlatCurve{0.04};
  m.factors = {{-0.7, PowerKernel{1.0, 0.1}}};
  return m;
}

}  // namespace

TEST_CASE("seed mixing separates blocks and seeds") {
  const std::uint64_t a = detail::mix_seed(1, 0);
  const std::uint64_t b = detail::mix_seed(1, 1);
  const std::uint64_t c = detail::mix_seed(2, 0);
  CHECK(a != b);
  CHECK(a != c);
  CHECK(detail::mix_seed(1, 0) == a);  // pure function
}

TEST_CASE("Box-Muller normals have the right first moments") {
  std::mt19937_64 rng(123);
  std::vector<double> z(400000);
  detail::fill_standard_normal(rng, z.data(), static_cast<std::ptrdiff_t>(z.size()));
  double mean = 0.0, var = 0.0;
  for (double x : z) mean += x;
  mean /= static_cast<double>(z.size());
  for (double x : z) var += (x - mean) * (x - mean);
  var /= static_cast<double>(z.size() - 1);
  // 5 sigma bands: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n)
  CHECK(std::fabs(mean) < 5.0 / std::sqrt(400000.0));
  CHECK(std::fabs(var - 1.0) < 5.0 * std::sqrt(2.0 / 400000.0));
}

TEST_CASE("kernel autocovariance closed forms and quadrature") {
  const KernelSpec ek = ExponentialKernel{2.0, 1.0};
  // Var(M_t) = a^2 (1 - e^{-2bt}) / (2b)
  CHECK(kernel_autocovariance(ek, 0.7, 0.0) ==
        doctest::Approx(1.5068060721167870461).epsilon(1e-13));
  // Cov(M_0.4, M_0.7) = a^2 e^{-b 0.3} (1 - e^{-2b 0.4}) / (2b)
  CHECK(kernel_autocovariance(ek, 0.4, 0.3) ==
        doctest::Approx(0.81589427396727662556).epsilon(1e-13));

  const KernelSpec pk = PowerKernel{1.0, 0.1};
  CHECK(kernel_autocovariance(pk, 0.7, 0.0) ==
        doctest::Approx(4.655749575474188442).epsilon(1e-13));
  CHECK(kernel_autocovariance(pk, 0.4, 0.3) ==
        doctest::Approx(1.3496925591140162307).epsilon(1e-9));

  // generic quadrature cross-check of the exponential off-diagonal
  const double quad =
      integrate([&](double w) {
        return kernel_value(ek, w) * kernel_value(ek, w + 0.3);
      }, 0.0, 0.4, 1e-12).value;
  CHECK(kernel_autocovariance(ek, 0.4, 0.3) ==
        doctest::Approx(quad).epsilon(1e-11));

  CHECK(kernel_autocovariance(ek, 0.0, 0.0) == 0.0);
}

TEST_CASE("driver covariance blocks carry the right entries") {
  const KernelSpec ek = ExponentialKernel{1.5, 0.8};
  const SimGrid grid{4, 1.0};
  const Eigen::MatrixXd cov = factor_driver_covariance(ek, grid);
  REQUIRE(cov.rows() == 8);
  CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // M-M block
  CHECK(cov(0, 0) == doctest::Approx(kernel_autocovariance(ek, 0.25, 0.0)));
  CHECK(cov(1, 3) == doctest::Approx(kernel_autocovariance(ek, 0.5, 0.5)));
  // W increments: Var = dt, independent of each other
  CHECK(cov(4, 4) == doctest::Approx(0.25));
  CHECK(cov(4, 5) == 0.0);
  // M_{t_1} vs dW_1 = K(t_1) - K(0); increments after t_j are uncorrelated
  CHECK(cov(0, 4) == doctest::Approx(kernel_integral(ek, 0.25)));
  CHECK(cov(0, 5) == 0.0);
  // M_{t_2} vs dW_1 = K(t_2) - K(t_2 - t_1)
  CHECK(cov(1, 4) == doctest::Approx(kernel_integral(ek, 0.5) -
                                     kernel_integral(ek, 0.25)));

  // the full matrix factorizes
  Eigen::LLT<Eigen::MatrixXd> llt(
      cov + 1e-14 * Eigen::MatrixXd::Identity(8, 8));
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("rough-kernel covariance factorizes at production size") {
  const SimGrid grid{200, 1.0};
  const Eigen::MatrixXd cov =
      factor_driver_covariance(PowerKernel{1.0, 0.1}, grid);
  CHECK_NOTHROW(detail::cholesky_with_jitter(cov));
}

TEST_CASE("multi-factor covariance is block diagonal") {
  ModelSpec m = reference_model();
  m.factors = {{-0.5, PowerKernel{1.0, 0.2}}, {0.3, ExponentialKernel{1.0, 1.0}}};
  const SimGrid grid{3, 1.0};
  const Eigen::MatrixXd cov = build_driver_covariance(m, grid);
  REQUIRE(cov.rows() == 12);
  CHECK(cov.block(0, 6, 6, 6).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cov.block(0, 0, 6, 6) ==
        factor_driver_covariance(m.factors[0].kernel, grid));
}

TEST_CASE("simulation is reproducible and seed-sensitive") {
  const ModelSpec m = reference_model();
  const SimGrid grid{16, 1.0};
  const McEstimate a = mc_put(m, 100.0, grid, 4000, 5);
  const McEstimate b = mc_put(m, 100.0, grid, 4000, 5);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
  const McEstimate c = mc_put(m, 100.0, grid, 4000, 6);
  CHECK(a.mean != c.mean);

  // partial last block: extending the pair count preserves the prefix stream
  const PathBundle p1 = simulate_paths(m, grid, 700, 5);
  const PathBundle p2 = simulate_paths(m, grid, 900, 5);
  for (int i = 0; i < 1400; ++i) {
    CHECK(p1.terminal_log_price[i] == p2.terminal_log_price[i]);
  }
}

TEST_CASE("terminal spot is a martingale under the Euler scheme") {
  // Left-point variance makes E[S_{j+1} | F_j] = S_j exact at any step count,
  // so the sample mean of S_T must sit on the forward within noise.
  const ModelSpec m = reference_model();
  const SimGrid grid{32, 1.0};
  const PathBundle paths = simulate_paths(m, grid, 60000, 3);
  double mean = 0.0;
  for (double x : paths.terminal_log_price) mean += std::exp(x);
  mean /= static_cast<double>(paths.terminal_log_price.size());
  double var = 0.0;
  for (double x : paths.terminal_log_price) {
    var += (std::exp(x) - mean) * (std::exp(x) - mean);
  }
  var /= static_cast<double>(paths.terminal_log_price.size() - 1);
  // conservative: treat paths as independent (antithetic pairing only helps)
  const double se = std::sqrt(var / static_cast<double>(
                                        paths.terminal_log_price.size()));
  CHECK(std::fabs(mean - 100.0) < 4.0 * se);
}

TEST_CASE("antithetic halves are strongly negatively correlated") {
  const ModelSpec m = reference_model();
  const SimGrid grid{16, 1.0};
  const PathBundle paths = simulate_paths(m, grid, 5000, 9);
  double ma = 0.0, mb = 0.0;
  const std::size_t n = 5000;
  for (std::size_t i = 0; i < n; ++i) {
    ma += paths.terminal_log_price[2 * i];
    mb += paths.terminal_log_price[2 * i + 1];
  }
  ma /= n;
  mb /= n;
  double cab = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = paths.terminal_log_price[2 * i] - ma;
    const double db = paths.terminal_log_price[2 * i + 1] - mb;
    cab += da * db;
    va += da * da;
    vb += db * db;
  }
  CHECK(cab / std::sqrt(va * vb) < -0.5);
}

TEST_CASE("integrated variance is positive and near its expectation") {
  const ModelSpec m = reference_model();
  const SimGrid grid{32, 1.0};
  const PathBundle paths = simulate_paths(m, grid, 4000, 2);
  double mean = 0.0;
  for (double iv : paths.integrated_variance) {
    CHECK(iv > 0.0);
    mean += iv;
  }
  mean /= static_cast<double>(paths.integrated_variance.size());
  // E[int V dt] = int V_0 = 0.04 up to the trapezoid-in-time bias
  CHECK(mean == doctest::Approx(0.04).epsilon(0.02));
}

TEST_CASE("eps = 0 Monte Carlo reproduces Black-Scholes exactly in law") {
  const ModelSpec m = reference_model(0.0);
  const SimGrid grid{8, 1.0};  // any step count: increments stay lognormal
  for (double strike : {90.0, 100.0, 115.0}) {
    const McEstimate est = mc_put(m, strike, grid, 60000, 11);
    const double bs = put_price({100.0, strike, 0.04});
    CHECK(std::fabs(est.mean - bs) < 3.0 * est.std_error);
  }
}

TEST_CASE("convergence study rows: structure and eps = 0 behavior") {
  const ModelSpec m = reference_model();
  const SimGrid grid{16, 1.0};
  const std::vector<double> eps_list{0.4, 0.2, 0.0};
  const std::vector<ConvergenceRow> rows =
      convergence_study(m, 100.0, eps_list, grid, 3000, 1);
  REQUIRE(rows.size() == 3);
  CHECK(std::isnan(rows[0].ratio));
  CHECK_FALSE(std::isnan(rows[1].ratio));
  CHECK(rows[0].err_over_eps == doctest::Approx(rows[0].err / 0.4));
  CHECK(std::isnan(rows[2].err_over_eps));
  // at eps = 0 the expansion is the exact Black-Scholes price
  CHECK(rows[2].p_exp == doctest::Approx(put_price({100.0, 100.0, 0.04})));
  for (const ConvergenceRow& r : rows) CHECK(r.std_error > 0.0);

  CHECK_THROWS_AS(convergence_study(m, 100.0, {0.1, 0.2}, grid, 3000, 1),
                  DomainError);
}

TEST_CASE("convergence verdicts") {
  using Rows = std::vector<ConvergenceRow>;
  auto row = [](double eps, double se, double err, double prev_err) {
    ConvergenceRow r;
    r.eps = eps;
    r.std_error = se;
    r.err = err;
    r.err_over_eps = eps > 0.0 ? err / eps
                               : std::numeric_limits<double>::quiet_NaN();
    r.ratio = prev_err > 0.0 ? err / prev_err
                             : std::numeric_limits<double>::quiet_NaN();
    return r;
  };

  // healthy: err/eps 0.5 -> 0.25 -> 0.1, final err within half the previous
  Rows good{row(0.4, 1e-3, 0.2, 0.0), row(0.2, 1e-3, 0.05, 0.2),
            row(0.1, 1e-3, 0.01, 0.05)};
  CHECK(assess_convergence(good).pass);

  // non-monotone err/eps fails and points at the noise when it dominates
  Rows noisy{row(0.4, 1e-1, 0.2, 0.0), row(0.2, 1e-1, 0.05, 0.2),
             row(0.1, 1e-1, 0.04, 0.05)};
  const ConvergenceVerdict nv = assess_convergence(noisy);
  CHECK_FALSE(nv.pass);
  CHECK(nv.reason.find("increase paths") != std::string::npos);

  // final row too far out even though the slope is right. On a halving
  // ladder the slope condition subsumes the half-previous-err budget, so a
  // budget-only failure needs a closer eps spacing at the end.
  Rows wide{row(0.4, 1e-6, 0.2, 0.0), row(0.2, 1e-6, 0.07, 0.2),
            row(0.15, 1e-6, 0.045, 0.07)};
  CHECK_FALSE(assess_convergence(wide).pass);

  // a trailing eps = 0 row must sit within pure noise
  Rows tail0{row(0.1, 1e-3, 0.01, 0.0), row(0.0, 1e-3, 2e-3, 0.01)};
  CHECK(assess_convergence(tail0).pass);
  Rows tail0_bad{row(0.1, 1e-3, 0.01, 0.0), row(0.0, 1e-3, 5e-3, 0.01)};
  CHECK_FALSE(assess_convergence(tail0_bad).pass);
}

TEST_CASE("mc implied variance inverts the mc price") {
  const ModelSpec m = reference_model();
  const SimGrid grid{32, 1.0};
  const auto iv = mc_implied_variance(m, 100.0, grid, 20000, 4);
  REQUIRE(iv.has_value());
  CHECK(iv->mean > 0.02);
  CHECK(iv->mean < 0.06);
  CHECK(iv->std_error > 0.0);
  // consistency: re-pricing at the implied variance recovers the mc price
  const McEstimate price = mc_put(m, 100.0, grid, 20000, 4);
  CHECK(put_price({100.0, 100.0, iv->mean}) ==
        doctest::Approx(price.mean).epsilon(1e-10));
}

TEST_CASE("conditional-iv experiment: columns, flags, determinism") {
  const ModelSpec m = reference_model();
  const SimGrid grid{16, 1.0};
  const std::vector<double> strikes{90.0, 100.0, 300.0};
  const auto pts = conditional_iv_experiment(m, strikes, std::nullopt, grid,
                                             4000, 13);
  REQUIRE(pts.size() == 3);
  for (const auto& pt : pts) {
    CHECK(pt.bandwidth > 0.0);
    CHECK(pt.expansion_iv ==
          doctest::Approx(
              implied_variance_expansion(100.0, expansion_inputs(m),
                                         AffineMean{expansion_inputs(m).exy},
                                         pt.strike)
                  .implied_total_variance)
              .epsilon(1e-12));
  }
  // near-the-money strikes have healthy effective sample sizes
  CHECK_FALSE(pts[0].low_ess);
  CHECK_FALSE(pts[1].low_ess);
  CHECK(pts[0].mc_iv.has_value());
  // a strike three times the spot sees essentially no paths
  CHECK(pts[2].low_ess);

  const auto again = conditional_iv_experiment(m, strikes, std::nullopt, grid,
                                               4000, 13);
  CHECK(pts[1].regression_iv == again[1].regression_iv);

  // explicit bandwidth is honored
  const auto wide = conditional_iv_experiment(m, {100.0}, 0.5, grid, 4000, 13);
  CHECK(wide[0].bandwidth == 0.5);
}

TEST_CASE("input validation") {
  const ModelSpec m = reference_model();
  CHECK_THROWS_AS(simulate_paths(m, SimGrid{1, 1.0}, 100, 1), DomainError);
  CHECK_THROWS_AS(simulate_paths(m, SimGrid{16, 0.0}, 100, 1), DomainError);
  CHECK_THROWS_AS(mc_put(m, 100.0, SimGrid{16, 1.0}, 1, 1), DomainError);
  CHECK_THROWS_AS(
      conditional_iv_experiment(m, {-5.0}, std::nullopt, SimGrid{16, 1.0}, 100, 1),
      DomainError);
  CHECK_THROWS_AS(
      conditional_iv_experiment(m, {100.0}, -0.1, SimGrid{16, 1.0}, 100, 1),
      DomainError);
}
