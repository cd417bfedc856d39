#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "adsm/model.hpp"

namespace adsm {

// A model plus run parameters, as resolved from a builtin name or a
// scenario file. `source` is the canonical JSON rendering and feeds the
// provenance hash.
struct Scenario {
    ModelSpec model;
    std::uint64_t seed = 42;
    double dt = 1e-3;
    double t_end = 10.0;
    double tol = 1e-9;
    int samples = 0;  // 0 keeps per-check defaults
    nlohmann::json source;

    std::uint64_t hash() const;
    std::string hash_hex() const;
};

// Builtin scenario names: "echo", "lin2", "pair".
bool is_builtin_scenario(const std::string& name);
Scenario builtin_scenario(const std::string& name);

Scenario scenario_from_json(const nlohmann::json& j);
// Resolves a builtin name or reads a JSON file.
Scenario load_scenario(const std::string& path_or_name);

// Newton starting point for locating a manifold point: the zero segment
// with a per-scenario delay guess (builtin values are documented; inline
// scenarios start from r = -h/2).
StatePoint documented_seed(const ModelSpec& model);

nlohmann::json state_point_to_json(const StatePoint& p);
StatePoint state_point_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace adsm
