#include "test_support.hpp"

#include "pertfbsde/errors.hpp"
#include "pertfbsde/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pertfbsde;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) out.push_back(l);
    return out;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pertfbsde_test_" + name);
    fs::remove_all(p);
    return p;
}

void expect_config_error(const std::string& doc, const std::string& fragment) {
    try {
        parse_config(doc);
        ADD_FAILURE() << "accepted: " << doc;
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(ParseConfig, MinimalDocumentGetsDefaults) {
    const auto c = parse_config(R"({"model": "linear_discount", "x0": 100, "T": 2})");
    EXPECT_EQ(c.model_name, "linear_discount");
    EXPECT_EQ(c.x0, std::vector<double>{100.0});
    EXPECT_EQ(c.t, 0.0);
    EXPECT_EQ(c.T, 2.0);
    EXPECT_DOUBLE_EQ(c.lambda, 1.0);
    EXPECT_DOUBLE_EQ(c.base_step, 0.01);
    EXPECT_EQ(c.epsilon, 1.0);
    EXPECT_EQ(c.orders_v, 2);
    EXPECT_EQ(c.orders_z, 1);
    EXPECT_TRUE(c.oracles.empty());
    EXPECT_EQ(c.entry().model.horizon, 2.0);
}

TEST(ParseConfig, FullDocument) {
    const auto c = parse_config(R"({
        "model": {"name": "cva_positive_part", "params": {"beta": 0.05, "sigma": 0.3}},
        "x0": [90], "t": 0.25, "T": 1.25, "orders_v": 3, "orders_z": 2, "lambda": 4,
        "n_particles": 5000, "base_step": 0.002, "seed": 17, "workers": 2, "epsilon": 0.5,
        "oracles": ["pde", "bump_z1"], "output": "out_dir",
        "pde_grid": {"n_space": 101, "n_time": 50, "boundary": "dirichlet-from-payoff"}, "bump_h": 0.5})");
    EXPECT_EQ(c.model_params.at("beta"), 0.05);
    EXPECT_EQ(c.lambda, 4.0);
    EXPECT_EQ(c.seed, 17u);
    EXPECT_EQ(c.workers, 2);
    EXPECT_EQ(c.oracles, (std::vector<std::string>{"pde", "bump_z1"}));
    EXPECT_EQ(c.pde_grid.boundary, Boundary::DirichletFromPayoff);
    EXPECT_EQ(c.bump_h, 0.5);
    const auto cc = c.cascade();
    EXPECT_EQ(cc.t, 0.25);
    EXPECT_EQ(cc.n_particles, 5000u);
}

TEST(ParseConfig, RejectsWithKeyAndConstraint) {
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "orders_v": 3, "orders_z": 3})", "orders_z");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "lambda": -1})", "lambda");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "n_particles": 10})", "n_particles");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "orders_v": 1, "orders_z": 2})", "orders_z");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "orders_v": 4, "orders_z": 0})", "orders_v");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "t": 1, "T": 1})", "t < T");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "workers": 0})", "workers");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "colour": 1})", "colour");
    expect_config_error(R"({"model": "linear_discount", "x0": 1, "oracles": ["magic"]})", "magic");
    expect_config_error(R"({"model": "linear_discount", "x0": [1, 2]})", "x0");
    expect_config_error(R"({"model": "coupled_drift", "x0": 1, "orders_v": 3, "orders_z": 0})", "coupled");
    expect_config_error(R"({"model": "nope", "x0": 1})", "linear_discount");
    expect_config_error(R"({"x0": 1})", "model");
    expect_config_error(R"({"model": {"name": "linear_discount", "params": {"T": 3}}, "x0": 1, "T": 2})", "T");
    expect_config_error("{not json", "JSON");
}

TEST(ParseConfig, RoundTripsThroughJson) {
    const auto c = parse_config(R"({"model": "quadratic_v", "x0": 0, "T": 0.5, "orders_v": 3, "seed": 9})");
    const auto again = parse_config(config_to_json(c));
    EXPECT_EQ(config_to_json(again), config_to_json(c));
}

TEST(RunExperiment, ZeroDriverRowsAreExactlyZero) {
    auto c = parse_config(R"({"model": {"name": "constant_driver", "params": {"c": 0}}, "x0": 0.5,
                              "orders_v": 3, "orders_z": 2, "n_particles": 500})");
    const auto r = run_experiment(c);
    for (const auto& e : r.expansion.estimates) {
        if (e.order == 0) continue;
        for (double v : e.value) EXPECT_EQ(v, 0.0);
        for (double s : e.std_error) EXPECT_EQ(s, 0.0);
    }
}

TEST(RunExperiment, OraclesOnLinearDiscount) {
    auto c = parse_config(R"({"model": "linear_discount", "x0": 100, "orders_v": 2, "orders_z": 1,
                              "n_particles": 5000, "oracles": ["quadrature_v1", "pde", "bump_z1"]})");
    const auto r = run_experiment(c);
    ASSERT_EQ(r.checks.size(), 3u);
    EXPECT_TRUE(r.all_pass());
    EXPECT_FALSE(r.coupled);
    EXPECT_EQ(r.checks[0].estimator, "V1");
    EXPECT_EQ(r.checks[1].estimator, "V_total");
    EXPECT_EQ(r.checks[2].estimator, "Z1_bump");
}

TEST(RunExperiment, OdeOracleOnQuadratic) {
    auto c = parse_config(R"({"model": "quadratic_v", "x0": 0, "T": 0.5, "orders_v": 3, "orders_z": 2,
                              "n_particles": 5000, "oracles": ["ode"]})");
    const auto r = run_experiment(c);
    EXPECT_EQ(r.checks.size(), 7u);
    EXPECT_TRUE(r.all_pass());
    EXPECT_EQ(applicable_oracles(c), (std::vector<std::string>{"ode", "quadrature_v1", "pde", "bump_z1", "bump_z2"}));
}

TEST(RunExperiment, CoupledModelUsesCoupledEstimators) {
    auto c = parse_config(R"({"model": "coupled_vol", "x0": 0, "orders_v": 2, "orders_z": 1, "n_particles": 2000,
                              "oracles": ["pde"]})");
    const auto r = run_experiment(c);
    EXPECT_TRUE(r.coupled);
    EXPECT_DOUBLE_EQ(r.expansion.find(Component::Z, 1)->value[0], 0.1);
    EXPECT_TRUE(r.all_pass());
    EXPECT_EQ(applicable_oracles(c), std::vector<std::string>{"pde"});
    c.oracles = {"bump_z1"};
    EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(RunExperiment, InapplicableOracleRejected) {
    auto c = parse_config(R"({"model": "linear_discount", "x0": 100, "n_particles": 200, "oracles": ["ode"]})");
    EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(Report, ValueOnlyRows) {
    ExperimentResult r;
    r.expansion = combine_orders({OrderEstimate{0, Component::V, {1.0}, {0.0}, 100, 100, 100},
                                  OrderEstimate{1, Component::V, {0.1}, {0.01}, 100, 80, 80}},
                                 1.0);
    RunConfig c = parse_config(R"({"model": "constant_driver", "x0": 0})");
    const auto dir = scratch("value_only");
    write_report(r, c, dir.string());
    const auto rows = lines(slurp(dir / "results.csv"));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], "order,component,value_1,std_error_1,n_particles,n_contributing");
    EXPECT_EQ(rows[2], "1,V,0.10000000000000001,0.01,100,80");
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
    EXPECT_FALSE(fs::exists(dir / "oracle.csv"));
}

TEST(Report, MultidimensionalZColumns) {
    ExperimentResult r;
    r.expansion = combine_orders({OrderEstimate{0, Component::V, {1.0}, {0.0}, 100, 100, 100},
                                  OrderEstimate{0, Component::Z, {0.1, 0.2}, {0.0, 0.0}, 100, 100, 100}},
                                 1.0);
    RunConfig c = parse_config(R"({"model": "constant_driver", "x0": 0})");
    const auto dir = scratch("multi_z");
    write_report(r, c, dir.string());
    const auto rows = lines(slurp(dir / "results.csv"));
    EXPECT_EQ(rows[0], "order,component,value_1,value_2,std_error_1,std_error_2,n_particles,n_contributing");
    EXPECT_EQ(rows[1], "0,V,1,,0,,100,100");
    EXPECT_EQ(rows[2], "0,Z,0.10000000000000001,0.20000000000000001,0,0,100,100");
}

TEST(Report, OracleComparisonAndManifest) {
    auto c = parse_config(R"({"model": "linear_discount", "x0": 100, "orders_v": 1, "orders_z": 0,
                              "n_particles": 1000, "seed": 321, "oracles": ["quadrature_v1"]})");
    const auto r = run_experiment(c);
    const auto dir = scratch("oracle");
    write_report(r, c, dir.string());
    const auto rows = lines(slurp(dir / "oracle.csv"));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], "estimator,oracle_value,mc_value,abs_diff,combined_se,pass");
    EXPECT_EQ(rows[1].substr(0, 3), "V1,");
    const std::string manifest = slurp(dir / "manifest.json");
    EXPECT_NE(manifest.find("\"seed\": 321"), std::string::npos);
    EXPECT_NE(manifest.find("\"lambda\": 2.0"), std::string::npos);
    EXPECT_NE(manifest.find("\"linear_discount\""), std::string::npos);
}

TEST(Report, ByteIdenticalForSameSeedAndWorkers) {
    const std::string doc = R"({"model": "cva_positive_part", "x0": 100, "orders_v": 2, "orders_z": 2,
                                "n_particles": 1500, "workers": 3, "seed": 4, "oracles": ["bump_z1"]})";
    const auto a = scratch("det_a"), b = scratch("det_b");
    write_report(run_experiment(parse_config(doc)), parse_config(doc), a.string());
    write_report(run_experiment(parse_config(doc)), parse_config(doc), b.string());
    for (const char* f : {"results.csv", "manifest.json", "oracle.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}
