#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrba/estimate.hpp"
#include "nrba/simulate.hpp"

namespace nrba::cli {

/// Run configuration. Relative paths resolve against the config file's directory.
struct RunConfig {
    std::filesystem::path input;
    std::filesystem::path schema;
    std::optional<std::uint64_t> seed;
    std::filesystem::path output = "nrba_out";

    std::vector<Method> methods;
    std::vector<std::string> subgroups;
    std::optional<std::string> group_by;

    PropensitySpec propensity;
    std::optional<double> trim_quantile;

    ImputerSpec imputer;
    std::size_t m = 5;

    std::vector<double> sensitivity_k{-0.8, -1.2, -1.6};
    bool sensitivity_configured = false;

    AnalysisFormula formula = default_formula();
    MixedOptions mixed;
    GeeOptions gee;
    std::size_t bootstrap = 0;

    std::optional<CohortScenario> scenario;

    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    /// Normalized form; its digest is the config hash.
    nlohmann::json to_json() const;

    /// Checks for commands that read a dataset. Throws ConfigError listing every problem.
    void validate_for_data() const;
    std::uint64_t require_seed() const;
};

}  // namespace nrba::cli
