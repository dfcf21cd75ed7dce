// volexp — prices European puts under small-vol-of-vol stochastic volatility
// models via a first-order expansion, and checks the expansion against its
// own Monte Carlo oracle. Subcommands emit CSV on stdout (or --out) and keep
// human-readable summaries on stderr.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "volexp/config.hpp"
#include "volexp/errors.hpp"
#include "volexp/expansion.hpp"
#include "volexp/mc.hpp"
#include "volexp/model.hpp"

namespace {

using namespace volexp;

// 17 significant digits round-trips doubles exactly; NaN renders as an empty
// field (first-row ratio, eps = 0 err/eps, skipped estimates).
std::string csv_field(double x) {
  if (std::isnan(x)) return "";
  if (x == 0.0) return "0";  // never print "-0"
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

int run_price(const RunConfig& cfg, std::ostream& csv) {
  const ExpansionInputs in = expansion_inputs(cfg.model);
  const ConditionalMean mean = AffineMean{in.exy};
  csv << "strike,k,bs_price,correction,price_form_a,price_form_c,"
         "equiv_total_variance\n";
  for (double strike : cfg.strikes) {
    const PutExpansionReport r = put_expansion(cfg.model.spot, in, mean, strike);
    csv << csv_field(strike) << ',' << csv_field(std::log(strike / cfg.model.spot))
        << ',' << csv_field(r.leading) << ',' << csv_field(r.correction) << ','
        << csv_field(r.form_a) << ',' << csv_field(r.form_c) << ','
        << csv_field(r.equivalent_variance) << '\n';
  }
  std::cerr << "priced " << cfg.strikes.size() << " strikes (v=" << in.v_eps
            << ", E[XY]=" << in.exy << ", eps=" << in.eps << ")\n";
  return 0;
}

int run_smile(const RunConfig& cfg, std::ostream& csv) {
  const ExpansionInputs in = expansion_inputs(cfg.model);
  const ConditionalMean mean = AffineMean{in.exy};
  csv << "strike,k,implied_total_variance,implied_vol\n";
  for (const SmilePoint& pt : smile(cfg.model.spot, in, mean, cfg.strikes)) {
    csv << csv_field(pt.strike) << ',' << csv_field(pt.log_moneyness) << ','
        << csv_field(pt.implied_total_variance) << ','
        << csv_field(std::sqrt(pt.implied_total_variance / cfg.model.horizon))
        << '\n';
  }
  std::cerr << "smile over " << cfg.strikes.size() << " strikes (v=" << in.v_eps
            << ", eps=" << in.eps << ")\n";
  return 0;
}

int run_skew(const RunConfig& cfg, std::ostream& csv) {
  const ExpansionInputs in = expansion_inputs(cfg.model);
  const ConditionalMean mean = AffineMean{in.exy};
  const double skew = skew_atm(in, mean);

  // Centered difference of the first-order implied vol in log-moneyness.
  const double h = 1e-4;
  const double fd = (smile_vol_first_order(in, mean, h) -
                     smile_vol_first_order(in, mean, -h)) /
                    (2.0 * h);

  csv << "skew_atm,fd_cross_check,difference\n";
  csv << csv_field(skew) << ',' << csv_field(fd) << ','
      << csv_field(skew - fd) << '\n';
  std::cerr << "skew_atm = " << skew << ", finite-difference = " << fd
            << ", difference = " << (skew - fd) << '\n';
  return 0;
}

int run_validate(const RunConfig& cfg, std::ostream& csv) {
  const SimGrid grid{cfg.steps, cfg.model.horizon};
  const double strike = cfg.model.spot;  // at the money
  const std::vector<ConvergenceRow> rows = convergence_study(
      cfg.model, strike, cfg.eps_list, grid, cfg.paths, cfg.seed);

  csv << "eps,p_mc,se,p_exp,err,err_over_eps,ratio\n";
  for (const ConvergenceRow& r : rows) {
    csv << csv_field(r.eps) << ',' << csv_field(r.p_mc) << ','
        << csv_field(r.std_error) << ',' << csv_field(r.p_exp) << ','
        << csv_field(r.err) << ',' << csv_field(r.err_over_eps) << ','
        << csv_field(r.ratio) << '\n';
  }

  const ConvergenceVerdict verdict = assess_convergence(rows);
  std::cerr << (verdict.pass ? "PASS" : "FAIL") << ": " << verdict.reason
            << " (" << cfg.paths << " pairs, " << cfg.steps << " steps, seed "
            << cfg.seed << ")\n";
  return verdict.pass ? 0 : 4;
}

int run_conditional_iv(const RunConfig& cfg, std::ostream& csv) {
  const SimGrid grid{cfg.steps, cfg.model.horizon};
  const std::vector<ConditionalIvPoint> pts = conditional_iv_experiment(
      cfg.model, cfg.strikes, cfg.bandwidth, grid, cfg.paths, cfg.seed);

  csv << "strike,regression_iv,mc_iv,expansion_iv,flag\n";
  for (const ConditionalIvPoint& pt : pts) {
    csv << csv_field(pt.strike) << ',' << csv_field(pt.regression_iv) << ','
        << (pt.mc_iv ? csv_field(pt.mc_iv->mean) : std::string()) << ','
        << csv_field(pt.expansion_iv) << ','
        << (pt.low_ess ? "low_ess" : "") << '\n';
  }

  if (!pts.empty()) {
    std::cerr << "kernel regression bandwidth " << pts.front().bandwidth
              << " on " << 2 * cfg.paths << " paths; effective sample sizes:";
    for (const ConditionalIvPoint& pt : pts) {
      std::cerr << ' ' << static_cast<std::int64_t>(pt.ess);
    }
    std::cerr << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "First-order put pricing and smile asymptotics for Bergomi-type "
      "stochastic volatility models, with a Monte Carlo validation oracle"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  std::int64_t paths = 0;
  int steps = 0;
  double bandwidth = 0.0;
  std::vector<double> eps_list;
  std::vector<double> strikes;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "model/run configuration (JSON)")
        ->required();
    cmd->add_option("--out", out_path, "write CSV to this file, not stdout");
    cmd->add_option("--seed", seed, "override the RNG seed");
    cmd->add_option("--paths", paths, "override the antithetic pair count");
    cmd->add_option("--steps", steps, "override the Euler step count");
    cmd->add_option("--eps-list", eps_list,
                    "override the vol-of-vol ladder (decreasing)")
        ->delimiter(',');
    cmd->add_option("--strikes", strikes, "override the strike list")
        ->delimiter(',');
  };

  CLI::App* price = app.add_subcommand(
      "price", "expanded put prices across strikes");
  CLI::App* smile_cmd = app.add_subcommand(
      "smile", "first-order implied variance smile");
  CLI::App* skew = app.add_subcommand(
      "skew", "at-the-money skew with finite-difference cross-check");
  CLI::App* validate = app.add_subcommand(
      "validate", "Monte Carlo convergence study of the expansion error");
  CLI::App* conditional_iv = app.add_subcommand(
      "conditional-iv",
      "regression estimate of E[integrated variance | S_T = K] vs the smile");
  for (CLI::App* cmd : {price, smile_cmd, skew, validate, conditional_iv}) {
    add_common(cmd);
  }
  conditional_iv->add_option("--bandwidth", bandwidth,
                             "override the regression bandwidth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  CLI::App* cmd = app.get_subcommands().front();

  try {
    RunConfig cfg = load_config(config_path);
    if (cmd->count("--seed") > 0) cfg.seed = seed;
    if (cmd->count("--paths") > 0) {
      if (paths < 2) throw ConfigError("--paths must be >= 2");
      cfg.paths = paths;
    }
    if (cmd->count("--steps") > 0) {
      if (steps < 2) throw ConfigError("--steps must be >= 2");
      cfg.steps = steps;
    }
    if (cmd->count("--eps-list") > 0) {
      check_eps_list(eps_list, "--eps-list");
      cfg.eps_list = eps_list;
    }
    if (cmd->count("--strikes") > 0) {
      check_strikes(strikes, "--strikes");
      cfg.strikes = strikes;
    }
    if (cmd->count("--out") > 0) cfg.out = out_path;
    if (cmd == conditional_iv && cmd->count("--bandwidth") > 0) {
      if (!(bandwidth > 0.0)) throw ConfigError("--bandwidth must be positive");
      cfg.bandwidth = bandwidth;
    }

    std::ofstream out_file;
    if (!cfg.out.empty()) {
      out_file.open(cfg.out, std::ios::binary);
      if (!out_file) throw ConfigError("cannot open output file: " + cfg.out);
    }
    std::ostream& csv = cfg.out.empty() ? std::cout : out_file;

    if (cmd->get_name() == "price") return run_price(cfg, csv);
    if (cmd->get_name() == "smile") return run_smile(cfg, csv);
    if (cmd->get_name() == "skew") return run_skew(cfg, csv);
    if (cmd->get_name() == "validate") return run_validate(cfg, csv);
    return run_conditional_iv(cfg, csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  }
}
