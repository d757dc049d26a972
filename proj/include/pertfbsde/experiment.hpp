/**
 * @file experiment.hpp
 * @brief Run configuration, orchestration of estimators and oracles, and report files.
 */
#pragma once

#include "pertfbsde/cascade.hpp"
#include "pertfbsde/model.hpp"
#include "pertfbsde/oracle.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pertfbsde {

struct PdeGridConfig {
    std::optional<double> x_min;   ///< default x0 - 6 sigma(x0) sqrt(T - t)
    std::optional<double> x_max;
    int n_space = 401;
    int n_time = 400;
    Boundary boundary = Boundary::LinearExtrapolation;
};

struct RunConfig {
    std::string model_name;
    ParamMap model_params;
    std::vector<double> x0;
    double t = 0.0;
    double T = 1.0;
    int orders_v = 2;
    int orders_z = 1;
    double lambda = 0.0;        ///< resolved: 2 / (T - t) when not given
    std::size_t n_particles = 100000;
    double base_step = 0.0;     ///< resolved: (T - t) / 200 when not given
    std::uint64_t seed = 1;
    int workers = 1;
    double epsilon = 1.0;
    std::vector<std::string> oracles;
    std::string output = "results";
    PdeGridConfig pde_grid;
    double bump_h = 0.0;        ///< resolved: 1e-2 max(1, |x0_1|) when not given

    /// Catalog entry with T applied.
    CatalogEntry entry() const;
    CascadeConfig cascade() const;
};

/// Oracle names accepted in RunConfig::oracles.
const std::vector<std::string>& oracle_names();

/// Oracles that apply to the configured model and orders.
std::vector<std::string> applicable_oracles(const RunConfig& config);

/// Parse and validate a JSON document; defaults are filled in.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// The resolved configuration as JSON text (keys in a fixed order).
std::string config_to_json(const RunConfig& config, int indent = 2);

struct OracleCheck {
    std::string estimator;
    double oracle_value = 0.0;
    double mc_value = 0.0;
    double abs_diff = 0.0;
    double combined_se = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct ExperimentResult {
    ExpansionResult expansion;
    std::vector<OracleCheck> checks;
    bool coupled = false;

    bool all_pass() const;
};

/// Estimators order by order, then the enabled oracles.
ExperimentResult run_experiment(const RunConfig& config);

/// Writes results.csv, manifest.json and (with checks) oracle.csv into `dir`.
void write_report(const ExperimentResult& result, const RunConfig& config, const std::string& dir);

/// Only the oracle comparison file.
void write_oracle_csv(const ExperimentResult& result, const std::string& path);

}  // namespace pertfbsde
