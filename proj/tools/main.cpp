// Command-line front end: run, verify, catalog.

#include "pertfbsde/errors.hpp"
#include "pertfbsde/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>

using namespace pertfbsde;

namespace {

void print_estimates(const ExperimentResult& r) {
    for (const auto& e : r.expansion.estimates) {
        std::string vals, ses;
        for (std::size_t a = 0; a < e.value.size(); ++a) {
            vals += fmt::format("{}{:.10g}", a ? " " : "", e.value[a]);
            ses += fmt::format("{}{:.3g}", a ? " " : "", e.std_error[a]);
        }
        fmt::print("{}{}  {}  (se {})  contributing {}/{}\n", to_string(e.component), e.order, vals, ses,
                   e.n_contributing, e.n_particles);
    }
    for (std::size_t i = 0; i < r.expansion.total_v.size(); ++i) {
        fmt::print("V total (eps={})  {:.10g}  (se {:.3g})\n", r.expansion.epsilon, r.expansion.total_v[i],
                   r.expansion.total_v_se[i]);
    }
}

int report_checks(const ExperimentResult& r) {
    int failed = 0;
    for (const auto& c : r.checks) {
        fmt::print("{:<12} oracle {:.10g}  mc {:.10g}  diff {:.3g}  se {:.3g}  {}\n", c.estimator, c.oracle_value,
                   c.mc_value, c.abs_diff, c.combined_se, c.pass ? "pass" : "FAIL");
        if (!c.pass) ++failed;
    }
    if (failed) {
        fmt::print(stderr, "{} of {} oracle checks failed:\n", failed, r.checks.size());
        for (const auto& c : r.checks) {
            if (!c.pass) {
                fmt::print(stderr, "  {}: |{:.10g} - {:.10g}| = {:.3g} > {:.3g}\n", c.estimator, c.mc_value,
                           c.oracle_value, c.abs_diff, c.tolerance);
            }
        }
    }
    return failed ? 1 : 0;
}

void apply_overrides(RunConfig& config, const std::optional<std::uint64_t>& seed, const std::optional<int>& workers,
                     const std::optional<std::string>& out) {
    if (seed) config.seed = *seed;
    if (workers) {
        if (*workers < 1) throw ConfigError("--workers must be at least 1");
        config.workers = *workers;
    }
    if (out) config.output = *out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perturbative Monte Carlo solver for forward-backward SDEs"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out;

    auto* run = app.add_subcommand("run", "run the estimators and configured oracles, write reports");
    run->add_option("config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "override the seed");
    run->add_option("--workers", workers, "override the worker count");
    run->add_option("--out", out, "output directory");

    auto* verify = app.add_subcommand("verify", "run only the oracle suite");
    verify->add_option("config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    verify->add_option("--seed", seed, "override the seed");
    verify->add_option("--workers", workers, "override the worker count");
    verify->add_option("--out", out, "output directory");

    auto* catalog = app.add_subcommand("catalog", "list builtin models");

    CLI11_PARSE(app, argc, argv);

    try {
        if (catalog->parsed()) {
            for (const auto& name : catalog_names()) fmt::print("{:<20} {}\n", name, catalog_description(name));
            return 0;
        }
        RunConfig config = load_config(config_path);
        apply_overrides(config, seed, workers, out);
        if (verify->parsed()) {
            if (config.oracles.empty()) config.oracles = applicable_oracles(config);
            const ExperimentResult result = run_experiment(config);
            std::filesystem::create_directories(config.output);
            write_oracle_csv(result, (std::filesystem::path(config.output) / "oracle.csv").string());
            if (result.checks.empty()) {
                fmt::print(stderr, "no oracle applies to this configuration\n");
                return 1;
            }
            return report_checks(result);
        }
        const ExperimentResult result = run_experiment(config);
        write_report(result, config, config.output);
        print_estimates(result);
        return report_checks(result);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 3;
    }
}
