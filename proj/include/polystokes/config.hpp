#pragma once

// Run configuration for the command-line front end: a strict JSON schema with
// per-key flag overrides, validated against the library preconditions before
// any computation starts.

#include <polystokes/element_ops.hpp>
#include <polystokes/newton.hpp>
#include <polystokes/rheology.hpp>
#include <polystokes/verification.hpp>

#include <nlohmann/json.hpp>

#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace polystokes {

enum class Command { solve, convergence, check_law, mesh_info };

inline std::string command_name(Command command) {
  switch (command) {
    case Command::solve: return "solve";
    case Command::convergence: return "convergence";
    case Command::check_law: return "check-law";
    case Command::mesh_info: return "mesh-info";
  }
  throw std::logic_error("command_name: unreachable");
}

inline Command parse_command(const std::string& name) {
  if (name == "solve") return Command::solve;
  if (name == "convergence") return Command::convergence;
  if (name == "check-law") return Command::check_law;
  if (name == "mesh-info") return Command::mesh_info;
  throw std::invalid_argument("unknown command '" + name +
                              "' (expected solve, convergence, check-law, or mesh-info)");
}

inline LawKind parse_law_kind(const std::string& name) {
  if (name == "newtonian") return LawKind::newtonian;
  if (name == "power_law") return LawKind::power_law;
  if (name == "carreau_yasuda") return LawKind::carreau_yasuda;
  throw std::invalid_argument("unknown law kind '" + name +
                              "' (expected newtonian, power_law, or carreau_yasuda)");
}

struct RunConfig {
  Command command = Command::solve;
  FlowLaw law;
  std::string family = "cartesian";  // empty when a mesh file is given
  std::string mesh_file;
  std::vector<std::size_t> levels = {4, 8, 16, 32};  // convergence refinements
  std::size_t n = 8;                                 // single-mesh resolution
  int k = 1;
  double gamma = -1.0;  // negative selects the default stabilization weight
  double amplitude = default_distortion;
  int quad_boost = 0;
  unsigned seed = 0;
  unsigned threads = 1;
  std::string out = "out";
  double newton_tol = 1e-11;
  int newton_max_iter = 50;
  bool newton_damping = true;
  bool newton_condense = false;
  bool newton_continuation = true;
  double continuation_step = 0.25;

  NewtonConfig newton() const {
    NewtonConfig config;
    config.tol = newton_tol;
    config.max_iter = newton_max_iter;
    config.damping = newton_damping;
    config.condense = newton_condense;
    config.continuation = newton_continuation;
    config.continuation_step = continuation_step;
    return config;
  }

  void validate() const {
    law.validate();
    if (family.empty() == mesh_file.empty()) {
      throw std::invalid_argument(
          "config: exactly one of 'family' and 'mesh_file' must be given");
    }
    if (!family.empty()) parse_mesh_family(family);
    if (command == Command::convergence) {
      if (!mesh_file.empty()) {
        throw std::invalid_argument("config: convergence studies need a mesh family");
      }
      if (levels.size() < 2) {
        throw std::invalid_argument("config: convergence needs at least two levels");
      }
      for (std::size_t i = 0; i < levels.size(); i++) {
        if (levels[i] < 1 || (i > 0 && levels[i] <= levels[i - 1])) {
          throw std::invalid_argument("config: levels must be positive and strictly increasing");
        }
      }
    }
    if (n < 1) throw std::invalid_argument("config: n must be >= 1");
    if (k < 1) throw std::invalid_argument("config: k must be >= 1");
    if (gamma >= 0.0) detail::check_gamma(law, gamma);
    if (!(amplitude >= 0.0)) throw std::invalid_argument("config: amplitude must be >= 0");
    if (quad_boost < 0) throw std::invalid_argument("config: quad_boost must be >= 0");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (out.empty()) throw std::invalid_argument("config: output directory must be nonempty");
    if (!(newton_tol > 0.0)) throw std::invalid_argument("config: newton tol must be positive");
    if (newton_max_iter < 1) throw std::invalid_argument("config: newton max_iter must be >= 1");
    if (!(continuation_step > 0.0)) {
      throw std::invalid_argument("config: continuation_step must be positive");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command_name(command);
    j["law"] = {{"kind", to_string(law.kind)},
                {"mu", law.mu},
                {"delta", law.delta},
                {"a", law.a},
                {"r", law.r}};
    if (!family.empty()) j["family"] = family;
    if (!mesh_file.empty()) j["mesh_file"] = mesh_file;
    j["levels"] = levels;
    j["n"] = n;
    j["k"] = k;
    j["gamma"] = gamma;
    j["amplitude"] = amplitude;
    j["quad_boost"] = quad_boost;
    j["seed"] = seed;
    j["threads"] = threads;
    j["out"] = out;
    j["newton"] = {{"tol", newton_tol},
                   {"max_iter", newton_max_iter},
                   {"damping", newton_damping},
                   {"condense", newton_condense},
                   {"continuation", newton_continuation},
                   {"continuation_step", continuation_step}};
    return j;
  }
};

namespace detail {

template <typename T>
T config_value(const nlohmann::json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception& error) {
    throw std::invalid_argument("config key '" + key + "': " + error.what());
  }
}

inline void parse_law_section(const nlohmann::json& section, FlowLaw& law) {
  for (const auto& [key, value] : section.items()) {
    if (key == "kind") law.kind = parse_law_kind(config_value<std::string>(value, "law.kind"));
    else if (key == "mu") law.mu = config_value<double>(value, "law.mu");
    else if (key == "delta") law.delta = config_value<double>(value, "law.delta");
    else if (key == "a") law.a = config_value<double>(value, "law.a");
    else if (key == "r") law.r = config_value<double>(value, "law.r");
    else throw std::invalid_argument("config: unknown key 'law." + key + "'");
  }
}

inline void parse_newton_section(const nlohmann::json& section, RunConfig& config) {
  for (const auto& [key, value] : section.items()) {
    if (key == "tol") config.newton_tol = config_value<double>(value, "newton.tol");
    else if (key == "max_iter") config.newton_max_iter = config_value<int>(value, "newton.max_iter");
    else if (key == "damping") config.newton_damping = config_value<bool>(value, "newton.damping");
    else if (key == "condense") config.newton_condense = config_value<bool>(value, "newton.condense");
    else if (key == "continuation") {
      config.newton_continuation = config_value<bool>(value, "newton.continuation");
    } else if (key == "continuation_step") {
      config.continuation_step = config_value<double>(value, "newton.continuation_step");
    } else {
      throw std::invalid_argument("config: unknown key 'newton." + key + "'");
    }
  }
}

}  // namespace detail

/// Parses and validates a configuration object. Unknown keys are rejected;
/// values out of the library's admissible ranges (r <= 1, gamma outside the
/// admissible stabilization interval, ...) throw with a descriptive message.
inline RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  RunConfig config;
  bool family_given = false, mesh_file_given = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "command") {
      config.command = parse_command(detail::config_value<std::string>(value, key));
    } else if (key == "law") {
      if (!value.is_object()) throw std::invalid_argument("config: 'law' must be an object");
      detail::parse_law_section(value, config.law);
    } else if (key == "family") {
      config.family = detail::config_value<std::string>(value, key);
      family_given = true;
    } else if (key == "mesh_file") {
      config.mesh_file = detail::config_value<std::string>(value, key);
      mesh_file_given = true;
    } else if (key == "levels") {
      config.levels = detail::config_value<std::vector<std::size_t>>(value, key);
    } else if (key == "n") {
      config.n = detail::config_value<std::size_t>(value, key);
    } else if (key == "k") {
      config.k = detail::config_value<int>(value, key);
    } else if (key == "gamma") {
      config.gamma = detail::config_value<double>(value, key);
    } else if (key == "amplitude") {
      config.amplitude = detail::config_value<double>(value, key);
    } else if (key == "quad_boost") {
      config.quad_boost = detail::config_value<int>(value, key);
    } else if (key == "seed") {
      config.seed = detail::config_value<unsigned>(value, key);
    } else if (key == "threads") {
      config.threads = detail::config_value<unsigned>(value, key);
    } else if (key == "out") {
      config.out = detail::config_value<std::string>(value, key);
    } else if (key == "newton") {
      if (!value.is_object()) throw std::invalid_argument("config: 'newton' must be an object");
      detail::parse_newton_section(value, config);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  if (family_given && mesh_file_given && !config.family.empty() && !config.mesh_file.empty()) {
    throw std::invalid_argument("config: 'family' and 'mesh_file' conflict; give exactly one");
  }
  if (mesh_file_given && !config.mesh_file.empty() && !family_given) config.family.clear();
  config.validate();
  return config;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);  // allow comments
  } catch (const nlohmann::json::parse_error& error) {
    throw std::runtime_error("config file '" + path + "': " + error.what());
  }
  return parse_config(j);
}

}  // namespace polystokes
