#include <doctest.h>

#include <string>
#include <variant>

#include "volexp/config.hpp"
#include "volexp/errors.hpp"

using namespace volexp;

namespace {

// Minimal valid model; tests splice run keys or breakage into this.
const char* kBase = R"({
  "spot": 100.0, "horizon": 1.0, "eps": 0.2,
  "curve": { "type": "flat", "v0": 0.04 },
  "factors": [ { "rho": -0.7, "kernel": { "type": "power", "a": 1.0, "H": 0.1 } } ]
})";

std::string message_of(const char* text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config parses with documented defaults") {
  const RunConfig cfg = parse_config(kBase);
  CHECK(cfg.model.spot == 100.0);
  CHECK(cfg.model.horizon == 1.0);
  CHECK(cfg.model.eps == 0.2);
  CHECK(std::holds_alternative<FlatCurve>(cfg.model.curve));
  REQUIRE(cfg.model.factors.size() == 1);
  CHECK(cfg.model.factors[0].rho == -0.7);
  CHECK(std::holds_alternative<PowerKernel>(cfg.model.factors[0].kernel));

  REQUIRE(cfg.strikes.size() == 5);  // 0.8 .. 1.2 times spot
  CHECK(cfg.strikes.front() == doctest::Approx(80.0));
  CHECK(cfg.strikes.back() == doctest::Approx(120.0));
  REQUIRE(cfg.eps_list.size() == 4);
  CHECK(cfg.eps_list[0] == 0.4);
  CHECK(cfg.paths == 100000);
  CHECK(cfg.steps == 200);
  CHECK(cfg.seed == 1);
  CHECK_FALSE(cfg.bandwidth.has_value());
  CHECK(cfg.out.empty());
}

TEST_CASE("full config round trip") {
  const char* text = R"({
    "spot": 50.0, "horizon": 2.0, "eps": 0.1,
    "curve": { "type": "piecewise_constant",
               "breakpoints": [0.0, 1.0, 2.0], "values": [0.04, 0.09] },
    "factors": [
      { "rho": -0.4, "kernel": { "type": "exponential", "a": 2.0, "b": 1.5 } },
      { "rho": 0.2, "kernel": { "type": "tabulated",
                                "table": [[0.0, 1.0], [1.0, 0.5], [2.0, 0.1]] } }
    ],
    "strikes": [40.0, 50.0, 60.0],
    "eps_list": [0.2, 0.1, 0.0],
    "paths": 5000, "steps": 64, "seed": 99,
    "bandwidth": 0.02, "out": "result.csv"
  })";
  const RunConfig cfg = parse_config(text);
  CHECK(std::holds_alternative<PiecewiseConstantCurve>(cfg.model.curve));
  REQUIRE(cfg.model.factors.size() == 2);
  const auto& tk = std::get<TabulatedKernel>(cfg.model.factors[1].kernel);
  REQUIRE(tk.times.size() == 3);
  CHECK(tk.values[1] == 0.5);
  CHECK(cfg.strikes.size() == 3);
  CHECK(cfg.eps_list.back() == 0.0);
  CHECK(cfg.paths == 5000);
  CHECK(cfg.steps == 64);
  CHECK(cfg.seed == 99);
  CHECK(cfg.bandwidth == 0.02);
  CHECK(cfg.out == "result.csv");
}

TEST_CASE("errors name the offending key") {
  CHECK(message_of(R"({"horizon": 1.0})").find("\"spot\"") != std::string::npos);

  const std::string no_kernel = message_of(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [ { "rho": -0.7 } ]
  })");
  CHECK(no_kernel.find("\"kernel\"") != std::string::npos);
  CHECK(no_kernel.find("factors[0]") != std::string::npos);

  const std::string unknown = message_of(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2, "volvol": 1,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [ { "rho": -0.7, "kernel": { "type": "power", "a": 1.0, "H": 0.1 } } ]
  })");
  CHECK(unknown.find("\"volvol\"") != std::string::npos);

  const std::string bad_type = message_of(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2,
    "curve": { "type": "linear", "v0": 0.04 },
    "factors": [ { "rho": -0.7, "kernel": { "type": "power", "a": 1.0, "H": 0.1 } } ]
  })");
  CHECK(bad_type.find("curve.type") != std::string::npos);

  const std::string bad_h = message_of(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [ { "rho": -0.7, "kernel": { "type": "power", "a": 1.0, "Hurst": 0.1 } } ]
  })");
  CHECK(bad_h.find("\"Hurst\"") != std::string::npos);
}

TEST_CASE("model semantics are validated at parse time") {
  // eps < 0
  CHECK_THROWS_AS(parse_config(R"({
    "spot": 100.0, "horizon": 1.0, "eps": -0.2,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [ { "rho": -0.7, "kernel": { "type": "power", "a": 1.0, "H": 0.1 } } ]
  })"),
                  ConfigError);
  // correlations with sum of squares above one
  CHECK_THROWS_AS(parse_config(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [
      { "rho": -0.8, "kernel": { "type": "power", "a": 1.0, "H": 0.1 } },
      { "rho": 0.7, "kernel": { "type": "exponential", "a": 1.0, "b": 1.0 } }
    ]
  })"),
                  ConfigError);
}

TEST_CASE("run-key validation") {
  auto with = [](const std::string& extra) {
    std::string text = kBase;
    text.insert(text.rfind('}'), ", " + extra);
    return text;
  };
  CHECK_THROWS_AS(parse_config(with(R"("strikes": [])")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("strikes": [-10.0])")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("eps_list": [0.1, 0.2])")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("eps_list": [0.2, -0.1])")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("paths": 1)")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("paths": 2.5)")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("steps": 0)")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("seed": -1)")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("bandwidth": 0.0)")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(R"("out": 3)")), ConfigError);
  CHECK_NOTHROW(parse_config(with(R"("eps_list": [0.0])")));
}

TEST_CASE("malformed input") {
  CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2, 3]"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"spot": "a hundred"})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/path/config.json"), ConfigError);
}

TEST_CASE("tabulated kernel table shape is checked") {
  CHECK_THROWS_AS(parse_config(R"({
    "spot": 100.0, "horizon": 1.0, "eps": 0.2,
    "curve": { "type": "flat", "v0": 0.04 },
    "factors": [ { "rho": -0.7,
                   "kernel": { "type": "tabulated", "table": [[0.0, 1.0, 2.0]] } } ]
  })"),
                  ConfigError);
}
