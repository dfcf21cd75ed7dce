#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "volexp/errors.hpp"
#include "volexp/model.hpp"

namespace volexp {

/// A fully-resolved run: the model plus command parameters. Every field has a
/// default except the model itself, so a minimal config is just the model.
struct RunConfig {
  ModelSpec model;
  std::vector<double> strikes;    // default: {0.8..1.2} * spot
  std::vector<double> eps_list;   // default: {0.4, 0.2, 0.1, 0.05}
  std::int64_t paths = 100000;    // antithetic pairs
  int steps = 200;
  std::uint64_t seed = 1;
  std::optional<double> bandwidth;  // conditional-iv regression; Silverman if unset
  std::string out;                  // CSV destination; empty = stdout
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const char* where,
                                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

inline const json& require_key(const json& obj, const char* where,
                               const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ConfigError(std::string("missing key \"") + key + "\" in " + where);
  }
  return *it;
}

inline double as_number(const json& value, const std::string& key) {
  if (!value.is_number()) {
    throw ConfigError("key \"" + key + "\" must be a number");
  }
  return value.get<double>();
}

inline std::vector<double> as_number_list(const json& value,
                                          const std::string& key) {
  if (!value.is_array()) {
    throw ConfigError("key \"" + key + "\" must be an array of numbers");
  }
  std::vector<double> out;
  out.reserve(value.size());
  for (const auto& v : value) out.push_back(as_number(v, key));
  return out;
}

inline KernelSpec parse_kernel(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const json& type_val = require_key(j, where.c_str(), "type");
  if (!type_val.is_string()) {
    throw ConfigError("key \"" + where + ".type\" must be a string");
  }
  const std::string type = type_val.get<std::string>();
  if (type == "exponential") {
    reject_unknown_keys(j, where.c_str(), {"type", "a", "b"});
    return ExponentialKernel{
        as_number(require_key(j, where.c_str(), "a"), where + ".a"),
        as_number(require_key(j, where.c_str(), "b"), where + ".b")};
  }
  if (type == "power") {
    reject_unknown_keys(j, where.c_str(), {"type", "a", "H"});
    return PowerKernel{
        as_number(require_key(j, where.c_str(), "a"), where + ".a"),
        as_number(require_key(j, where.c_str(), "H"), where + ".H")};
  }
  if (type == "tabulated") {
    reject_unknown_keys(j, where.c_str(), {"type", "table"});
    const json& table = require_key(j, where.c_str(), "table");
    if (!table.is_array() || table.empty()) {
      throw ConfigError("key \"" + where + ".table\" must be a non-empty "
                        "array of [time, value] pairs");
    }
    TabulatedKernel k;
    for (const auto& row : table) {
      if (!row.is_array() || row.size() != 2) {
        throw ConfigError("key \"" + where + ".table\" entries must be "
                          "[time, value] pairs");
      }
      k.times.push_back(as_number(row[0], where + ".table"));
      k.values.push_back(as_number(row[1], where + ".table"));
    }
    return k;
  }
  throw ConfigError("key \"" + where + ".type\" must be \"exponential\", "
                    "\"power\" or \"tabulated\" (got \"" + type + "\")");
}

inline ForwardVarianceCurve parse_curve(const json& j) {
  if (!j.is_object()) throw ConfigError("curve must be an object");
  const json& type_val = require_key(j, "curve", "type");
  if (!type_val.is_string()) {
    throw ConfigError("key \"curve.type\" must be a string");
  }
  const std::string type = type_val.get<std::string>();
  if (type == "flat") {
    reject_unknown_keys(j, "curve", {"type", "v0"});
    return FlatCurve{as_number(require_key(j, "curve", "v0"), "curve.v0")};
  }
  if (type == "piecewise_constant") {
    reject_unknown_keys(j, "curve", {"type", "breakpoints", "values"});
    PiecewiseConstantCurve c;
    c.breakpoints = as_number_list(require_key(j, "curve", "breakpoints"),
                                   "curve.breakpoints");
    c.values = as_number_list(require_key(j, "curve", "values"),
                              "curve.values");
    return c;
  }
  throw ConfigError("key \"curve.type\" must be \"flat\" or "
                    "\"piecewise_constant\" (got \"" + type + "\")");
}

inline ModelSpec parse_model(const json& j) {
  ModelSpec m;
  m.spot = as_number(require_key(j, "config", "spot"), "spot");
  m.horizon = as_number(require_key(j, "config", "horizon"), "horizon");
  m.eps = as_number(require_key(j, "config", "eps"), "eps");
  m.curve = parse_curve(require_key(j, "config", "curve"));
  const json& factors = require_key(j, "config", "factors");
  if (!factors.is_array() || factors.empty()) {
    throw ConfigError("key \"factors\" must be a non-empty array");
  }
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const json& fj = factors[i];
    std::ostringstream where;
    where << "factors[" << i << "]";
    if (!fj.is_object()) throw ConfigError(where.str() + " must be an object");
    reject_unknown_keys(fj, where.str().c_str(), {"rho", "kernel"});
    Factor f;
    f.rho = as_number(require_key(fj, where.str().c_str(), "rho"),
                      where.str() + ".rho");
    f.kernel = parse_kernel(require_key(fj, where.str().c_str(), "kernel"),
                            where.str() + ".kernel");
    m.factors.push_back(std::move(f));
  }
  try {
    validate_model(m);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid model: ") + e.what());
  }
  return m;
}

inline std::int64_t as_integer(const json& value, const std::string& key,
                               std::int64_t min_value) {
  if (!value.is_number_integer() && !value.is_number_unsigned()) {
    throw ConfigError("key \"" + key + "\" must be an integer");
  }
  const std::int64_t v = value.get<std::int64_t>();
  if (v < min_value) {
    std::ostringstream msg;
    msg << "key \"" << key << "\" must be >= " << min_value;
    throw ConfigError(msg.str());
  }
  return v;
}

}  // namespace detail

/// Shared by the JSON loader and the CLI flag overrides, so both name the
/// offending parameter the same way.
inline void check_strikes(const std::vector<double>& strikes,
                          const std::string& where) {
  if (strikes.empty()) throw ConfigError(where + " is empty");
  for (double k : strikes) {
    if (!(k > 0.0)) throw ConfigError(where + " must be positive");
  }
}

inline void check_eps_list(const std::vector<double>& eps_list,
                           const std::string& where) {
  if (eps_list.empty()) throw ConfigError(where + " is empty");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] >= 0.0)) {
      throw ConfigError(where + " values must be >= 0");
    }
    if (i > 0 && !(eps_list[i] < eps_list[i - 1])) {
      throw ConfigError(where + " must be strictly decreasing");
    }
  }
}

/// Parses a config from JSON text. Model keys live at the top level (spot,
/// horizon, eps, curve, factors); run keys (strikes, eps_list, paths, steps,
/// seed, bandwidth, out) are optional. Unknown keys are rejected by name.
inline RunConfig parse_config(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  detail::reject_unknown_keys(
      j, "config",
      {"spot", "horizon", "eps", "curve", "factors", "strikes", "eps_list",
       "paths", "steps", "seed", "bandwidth", "out"});

  RunConfig cfg;
  cfg.model = detail::parse_model(j);

  if (j.contains("strikes")) {
    cfg.strikes = detail::as_number_list(j.at("strikes"), "strikes");
    check_strikes(cfg.strikes, "key \"strikes\"");
  } else {
    for (double m : {0.8, 0.9, 1.0, 1.1, 1.2}) {
      cfg.strikes.push_back(m * cfg.model.spot);
    }
  }

  if (j.contains("eps_list")) {
    cfg.eps_list = detail::as_number_list(j.at("eps_list"), "eps_list");
    check_eps_list(cfg.eps_list, "key \"eps_list\"");
  } else {
    cfg.eps_list = {0.4, 0.2, 0.1, 0.05};
  }

  if (j.contains("paths")) {
    cfg.paths = detail::as_integer(j.at("paths"), "paths", 2);
  }
  if (j.contains("steps")) {
    cfg.steps =
        static_cast<int>(detail::as_integer(j.at("steps"), "steps", 2));
  }
  if (j.contains("seed")) {
    cfg.seed =
        static_cast<std::uint64_t>(detail::as_integer(j.at("seed"), "seed", 0));
  }
  if (j.contains("bandwidth")) {
    const double h = detail::as_number(j.at("bandwidth"), "bandwidth");
    if (!(h > 0.0)) throw ConfigError("key \"bandwidth\" must be positive");
    cfg.bandwidth = h;
  }
  if (j.contains("out")) {
    if (!j.at("out").is_string()) {
      throw ConfigError("key \"out\" must be a string");
    }
    cfg.out = j.at("out").get<std::string>();
  }
  return cfg;
}

/// Loads and parses the config file at `path`.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace volexp
