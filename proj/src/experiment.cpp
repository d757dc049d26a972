#include "pertfbsde/experiment.hpp"

#include "pertfbsde/coupled.hpp"
#include "pertfbsde/errors.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace pertfbsde {

using json = nlohmann::ordered_json;

const std::vector<std::string>& oracle_names() {
    static const std::vector<std::string> names = {"ode", "quadrature_v1", "pde", "bump_z1", "bump_z2"};
    return names;
}

std::vector<std::string> applicable_oracles(const RunConfig& config) {
    const CatalogEntry e = config.entry();
    const ModelSpec& m = e.model;
    std::vector<std::string> out;
    if (m.state_independent) out.push_back("ode");
    if (!m.coupled() && m.dim_x == 1 && config.orders_v >= 1) out.push_back("quadrature_v1");
    if (m.dim_x == 1 && m.dim_w == 1) out.push_back("pde");
    if (!m.coupled() && config.orders_z >= 1) out.push_back("bump_z1");
    if (!m.coupled() && config.orders_z >= 2) out.push_back("bump_z2");
    return out;
}

CatalogEntry RunConfig::entry() const {
    ParamMap p = model_params;
    p["T"] = T;
    return builtin_model(model_name, p);
}

CascadeConfig RunConfig::cascade() const {
    CascadeConfig c;
    c.t = t;
    c.lambda = lambda;
    c.base_step = base_step;
    c.n_particles = n_particles;
    c.seed = seed;
    c.workers = workers;
    return c;
}

namespace {

double number(const json& j, const std::string& key) {
    if (!j.is_number()) throw ConfigError(fmt::format("key '{}' must be a number", key));
    return j.get<double>();
}

long long integer(const json& j, const std::string& key) {
    if (!j.is_number_integer() && !(j.is_number() && std::floor(j.get<double>()) == j.get<double>())) {
        throw ConfigError(fmt::format("key '{}' must be an integer", key));
    }
    return j.is_number_integer() ? j.get<long long>() : static_cast<long long>(j.get<double>());
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            std::string list;
            for (const auto& k : allowed) list += (list.empty() ? "" : ", ") + k;
            throw ConfigError(fmt::format("unknown key '{}' in {}; allowed: {}", key, where, list));
        }
    }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    check_keys(doc,
               {"model", "x0", "t", "T", "orders_v", "orders_z", "lambda", "n_particles", "base_step", "seed",
                "workers", "epsilon", "oracles", "output", "pde_grid", "bump_h"},
               "config");

    RunConfig c;
    if (!doc.contains("model")) throw ConfigError("missing key 'model'");
    const json& model = doc["model"];
    if (model.is_string()) {
        c.model_name = model.get<std::string>();
    } else if (model.is_object()) {
        check_keys(model, {"name", "params"}, "model");
        if (!model.contains("name") || !model["name"].is_string()) throw ConfigError("key 'model.name' must be a string");
        c.model_name = model["name"].get<std::string>();
        if (model.contains("params")) {
            if (!model["params"].is_object()) throw ConfigError("key 'model.params' must be an object");
            for (const auto& [k, v] : model["params"].items()) c.model_params[k] = number(v, "model.params." + k);
        }
    } else {
        throw ConfigError("key 'model' must be a name or an object {name, params}");
    }

    if (!doc.contains("x0")) throw ConfigError("missing key 'x0'");
    if (doc["x0"].is_array()) {
        for (const auto& v : doc["x0"]) c.x0.push_back(number(v, "x0"));
    } else {
        c.x0.push_back(number(doc["x0"], "x0"));
    }

    if (doc.contains("t")) c.t = number(doc["t"], "t");
    const auto pT = c.model_params.find("T");
    if (doc.contains("T")) {
        c.T = number(doc["T"], "T");
        if (pT != c.model_params.end() && pT->second != c.T) {
            throw ConfigError("key 'T' disagrees with model.params.T");
        }
    } else if (pT != c.model_params.end()) {
        c.T = pT->second;
    }
    c.model_params.erase("T");
    if (!(c.t < c.T)) throw ConfigError(fmt::format("keys 't' and 'T' must satisfy t < T, got t={} T={}", c.t, c.T));

    if (doc.contains("orders_v")) c.orders_v = static_cast<int>(integer(doc["orders_v"], "orders_v"));
    if (doc.contains("orders_z")) c.orders_z = static_cast<int>(integer(doc["orders_z"], "orders_z"));
    if (c.orders_v < 0 || c.orders_v > 3) throw ConfigError(fmt::format("key 'orders_v' must be in 0..3, got {}", c.orders_v));
    if (c.orders_z < 0 || c.orders_z > 2) throw ConfigError(fmt::format("key 'orders_z' must be in 0..2, got {}", c.orders_z));
    if (c.orders_z > c.orders_v) {
        throw ConfigError(fmt::format("key 'orders_z' ({}) must not exceed 'orders_v' ({})", c.orders_z, c.orders_v));
    }

    const double horizon = c.T - c.t;
    c.lambda = 2.0 / horizon;
    if (doc.contains("lambda") && !doc["lambda"].is_null()) {
        c.lambda = number(doc["lambda"], "lambda");
        if (!(c.lambda > 0.0)) throw ConfigError(fmt::format("key 'lambda' must be positive, got {}", c.lambda));
    }
    if (doc.contains("n_particles")) {
        const long long n = integer(doc["n_particles"], "n_particles");
        if (n < 100) throw ConfigError(fmt::format("key 'n_particles' must be at least 100, got {}", n));
        c.n_particles = static_cast<std::size_t>(n);
    }
    c.base_step = horizon / 200.0;
    if (doc.contains("base_step") && !doc["base_step"].is_null()) {
        c.base_step = number(doc["base_step"], "base_step");
        if (!(c.base_step > 0.0)) throw ConfigError(fmt::format("key 'base_step' must be positive, got {}", c.base_step));
    }
    if (doc.contains("seed")) {
        const long long s = integer(doc["seed"], "seed");
        if (s < 0) throw ConfigError("key 'seed' must be non-negative");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (doc.contains("workers")) {
        c.workers = static_cast<int>(integer(doc["workers"], "workers"));
        if (c.workers < 1) throw ConfigError(fmt::format("key 'workers' must be at least 1, got {}", c.workers));
    }
    if (doc.contains("epsilon")) c.epsilon = number(doc["epsilon"], "epsilon");
    if (doc.contains("oracles")) {
        if (!doc["oracles"].is_array()) throw ConfigError("key 'oracles' must be a list");
        for (const auto& o : doc["oracles"]) {
            if (!o.is_string()) throw ConfigError("key 'oracles' must list names");
            const std::string name = o.get<std::string>();
            const auto& known = oracle_names();
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                throw ConfigError(fmt::format("key 'oracles' has unknown entry '{}'", name));
            }
            c.oracles.push_back(name);
        }
    }
    if (doc.contains("output")) {
        if (!doc["output"].is_string()) throw ConfigError("key 'output' must be a path string");
        c.output = doc["output"].get<std::string>();
    }
    if (doc.contains("pde_grid")) {
        const json& g = doc["pde_grid"];
        if (!g.is_object()) throw ConfigError("key 'pde_grid' must be an object");
        check_keys(g, {"x_min", "x_max", "n_space", "n_time", "boundary"}, "pde_grid");
        if (g.contains("x_min")) c.pde_grid.x_min = number(g["x_min"], "pde_grid.x_min");
        if (g.contains("x_max")) c.pde_grid.x_max = number(g["x_max"], "pde_grid.x_max");
        if (g.contains("n_space")) c.pde_grid.n_space = static_cast<int>(integer(g["n_space"], "pde_grid.n_space"));
        if (g.contains("n_time")) c.pde_grid.n_time = static_cast<int>(integer(g["n_time"], "pde_grid.n_time"));
        if (g.contains("boundary")) {
            if (!g["boundary"].is_string()) throw ConfigError("key 'pde_grid.boundary' must be a string");
            c.pde_grid.boundary = parse_boundary(g["boundary"].get<std::string>());
        }
        if (c.pde_grid.n_space < 3) throw ConfigError("key 'pde_grid.n_space' must be at least 3");
        if (c.pde_grid.n_time < 1) throw ConfigError("key 'pde_grid.n_time' must be at least 1");
    }
    c.bump_h = 1e-2 * std::max(1.0, c.x0.empty() ? 1.0 : std::abs(c.x0[0]));
    if (doc.contains("bump_h")) {
        c.bump_h = number(doc["bump_h"], "bump_h");
        if (!(c.bump_h > 0.0)) throw ConfigError("key 'bump_h' must be positive");
    }

    // Model-dependent checks.
    const CatalogEntry e = c.entry();
    if (static_cast<int>(c.x0.size()) != e.model.dim_x) {
        throw ConfigError(fmt::format("key 'x0' has {} components, model '{}' has dimension {}", c.x0.size(),
                                      c.model_name, e.model.dim_x));
    }
    if (e.model.coupled() && (c.orders_v > 2 || c.orders_z > 1)) {
        throw ConfigError(fmt::format("coupled model '{}' supports orders_v <= 2 and orders_z <= 1", c.model_name));
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

namespace {

json config_json(const RunConfig& c) {
    json params = json::object();
    for (const auto& [k, v] : c.model_params) params[k] = v;
    json grid = json::object();
    if (c.pde_grid.x_min) grid["x_min"] = *c.pde_grid.x_min;
    if (c.pde_grid.x_max) grid["x_max"] = *c.pde_grid.x_max;
    grid["n_space"] = c.pde_grid.n_space;
    grid["n_time"] = c.pde_grid.n_time;
    grid["boundary"] = to_string(c.pde_grid.boundary);
    json j;
    j["model"] = {{"name", c.model_name}, {"params", params}};
    j["x0"] = c.x0;
    j["t"] = c.t;
    j["T"] = c.T;
    j["orders_v"] = c.orders_v;
    j["orders_z"] = c.orders_z;
    j["lambda"] = c.lambda;
    j["n_particles"] = c.n_particles;
    j["base_step"] = c.base_step;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["epsilon"] = c.epsilon;
    j["oracles"] = c.oracles;
    j["output"] = c.output;
    j["pde_grid"] = grid;
    j["bump_h"] = c.bump_h;
    return j;
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

OracleCheck make_check(const std::string& name, double oracle, double mc, double se, double extra_tolerance = 0.0) {
    OracleCheck c;
    c.estimator = name;
    c.oracle_value = oracle;
    c.mc_value = mc;
    c.abs_diff = std::abs(mc - oracle);
    c.combined_se = se;
    c.tolerance = std::max(3.0 * se, extra_tolerance) + 1e-9 * std::max(1.0, std::abs(oracle));
    c.pass = c.abs_diff <= c.tolerance;
    return c;
}

std::string label(Component c, int order, std::size_t comp, std::size_t width) {
    std::string s = to_string(c) + std::to_string(order);
    if (c == Component::Z && width > 1) s += "_" + std::to_string(comp + 1);
    return s;
}

}  // namespace

std::string config_to_json(const RunConfig& config, int indent) { return config_json(config).dump(indent); }

bool ExperimentResult::all_pass() const {
    for (const auto& c : checks) {
        if (!c.pass) return false;
    }
    return true;
}

ExperimentResult run_experiment(const RunConfig& config) {
    const std::vector<std::string> usable = applicable_oracles(config);
    for (const std::string& oracle : config.oracles) {
        if (std::find(usable.begin(), usable.end(), oracle) == usable.end()) {
            throw ConfigError(fmt::format("oracle '{}' does not apply to model '{}' with orders_v={} orders_z={}",
                                          oracle, config.model_name, config.orders_v, config.orders_z));
        }
    }
    const CatalogEntry entry = config.entry();
    const ModelSpec& model = entry.model;
    const ZerothOrderFunctions& zeroth = entry.zeroth;
    const bool coupled = model.coupled();
    const ModelSpec free = coupled ? model.without_feedback() : model;
    const CascadeConfig cc = config.cascade();
    const std::span<const double> x0(config.x0);

    std::vector<OrderEstimate> estimates;
    estimates.push_back(estimate_v0(free, zeroth, x0, cc));
    std::optional<CoupledSources> sources;
    if (coupled) sources.emplace(build_sources(model, zeroth));
    for (int n = 1; n <= config.orders_v; ++n) {
        if (coupled) {
            estimates.push_back(n == 1 ? estimate_v1_coupled(*sources, x0, cc) : estimate_v2_coupled(*sources, x0, cc));
        } else {
            estimates.push_back(estimate(Component::V, n, model, zeroth, x0, cc));
        }
    }
    for (int n = 0; n <= config.orders_z; ++n) {
        if (n == 0) {
            estimates.push_back(estimate_z0(free, zeroth, x0, cc));
        } else if (coupled) {
            estimates.push_back(estimate_z1_coupled(*sources, x0, cc));
        } else {
            estimates.push_back(estimate(Component::Z, n, model, zeroth, x0, cc));
        }
    }

    ExperimentResult result;
    result.coupled = coupled;
    result.expansion = combine_orders(estimates, config.epsilon);
    const ExpansionResult& ex = result.expansion;
    const double horizon = config.T - config.t;

    for (const std::string& oracle : config.oracles) {
        if (oracle == "ode") {
            if (!model.state_independent) {
                throw ConfigError(fmt::format("oracle 'ode' requires a state-independent model; '{}' is not",
                                              config.model_name));
            }
            Jet psi(1, model.dim_x);
            model.terminal(config.T, x0, 0, psi);
            const OdeReduction ode = ode_reduction(scalar_driver(free), psi.value[0], horizon, config.epsilon, config.orders_v);
            for (int n = 0; n <= config.orders_v; ++n) {
                const OrderEstimate* e = ex.find(Component::V, n);
                result.checks.push_back(make_check(label(Component::V, n, 0, 1), ode.coefficients[static_cast<std::size_t>(n)],
                                                   e->value[0], e->std_error[0]));
            }
            for (int n = 0; n <= config.orders_z; ++n) {
                const OrderEstimate* e = ex.find(Component::Z, n);
                for (std::size_t a = 0; a < e->value.size(); ++a) {
                    result.checks.push_back(
                        make_check(label(Component::Z, n, a, e->value.size()), 0.0, e->value[a], e->std_error[a]));
                }
            }
        } else if (oracle == "quadrature_v1") {
            if (coupled) throw ConfigError("oracle 'quadrature_v1' applies to decoupled models only");
            if (config.orders_v < 1) throw ConfigError("oracle 'quadrature_v1' needs orders_v >= 1");
            const double q = quadrature_v1(model, zeroth, config.t, config.x0[0]);
            const OrderEstimate* e = ex.find(Component::V, 1);
            result.checks.push_back(make_check("V1", q, e->value[0], e->std_error[0]));
        } else if (oracle == "pde") {
            if (model.dim_x != 1 || model.dim_w != 1) throw ConfigError("oracle 'pde' requires d = r = 1");
            Jet vol(1, 1);
            model.vol_free(config.t, x0, 0, vol);
            const double spread = 6.0 * std::abs(vol.value[0]) * std::sqrt(horizon) + 1e-3 * std::max(1.0, std::abs(config.x0[0]));
            Grid1D grid;
            grid.x_min = config.pde_grid.x_min.value_or(config.x0[0] - spread);
            grid.x_max = config.pde_grid.x_max.value_or(config.x0[0] + spread);
            grid.n_space = config.pde_grid.n_space;
            grid.n_time = config.pde_grid.n_time;
            grid.boundary = config.pde_grid.boundary;
            const ValueSurface surface = solve_semilinear_pde(model, grid, config.epsilon, config.t);
            const double pde_value = surface.value(config.x0[0]);

            // Truncation allowance: size of the next term, |V_top| times the driver's rate scale and horizon.
            DriverEvaluator eval(free, zeroth);
            const DriverPoint& p = eval.evaluate(config.t, x0, 1);
            double rate = std::abs(p.dv);
            for (double dz : p.dz) rate += std::abs(dz) * std::abs(vol.value[0]);
            const OrderEstimate* top = ex.find(Component::V, config.orders_v);
            const double bound = std::abs(std::pow(config.epsilon, config.orders_v + 1)) * std::abs(top->value[0]) * rate * horizon;
            result.checks.push_back(make_check("V_total", pde_value, ex.total_v[0], ex.total_v_se[0], bound));
        } else if (oracle == "bump_z1" || oracle == "bump_z2") {
            const int n = oracle == "bump_z1" ? 1 : 2;
            if (coupled) throw ConfigError(fmt::format("oracle '{}' applies to decoupled models only", oracle));
            if (config.orders_z < n) throw ConfigError(fmt::format("oracle '{}' needs orders_z >= {}", oracle, n));
            Jet vol(model.dim_x * model.dim_w, model.dim_x);
            model.vol_free(config.t, x0, 0, vol);
            const VSamplerBuilder builder = [&](std::span<const double> x) { return v_sampler(n, model, zeroth, x, cc); };
            const McConfig mc{config.n_particles, config.seed, estimator_stream(Component::V, n, false, 7), config.workers};
            const OrderEstimate* z = ex.find(Component::Z, n);
            const BumpReport rep = check_gradient_vs_bump(builder, *z, x0, config.bump_h, vol.value, mc);
            for (std::size_t a = 0; a < rep.z_value.size(); ++a) {
                result.checks.push_back(make_check(label(Component::Z, n, a, rep.z_value.size()) + "_bump",
                                                   rep.bump_value[a], rep.z_value[a], rep.combined_se[a]));
            }
        }
    }
    return result;
}

void write_oracle_csv(const ExperimentResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
    out << "estimator,oracle_value,mc_value,abs_diff,combined_se,pass\n";
    for (const auto& c : result.checks) {
        out << c.estimator << ',' << num(c.oracle_value) << ',' << num(c.mc_value) << ',' << num(c.abs_diff) << ','
            << num(c.combined_se) << ',' << (c.pass ? "true" : "false") << '\n';
    }
    if (!out) throw std::runtime_error(fmt::format("failed writing '{}'", path));
}

void write_report(const ExperimentResult& result, const RunConfig& config, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    const ExpansionResult& ex = result.expansion;

    std::size_t width = 1;
    for (const auto& e : ex.estimates) width = std::max(width, e.value.size());
    {
        std::ofstream out(base / "results.csv", std::ios::binary);
        if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", (base / "results.csv").string()));
        out << "order,component";
        for (std::size_t k = 1; k <= width; ++k) out << ",value_" << k;
        for (std::size_t k = 1; k <= width; ++k) out << ",std_error_" << k;
        out << ",n_particles,n_contributing\n";
        for (const auto& e : ex.estimates) {
            out << e.order << ',' << to_string(e.component);
            for (std::size_t k = 0; k < width; ++k) out << ',' << (k < e.value.size() ? num(e.value[k]) : "");
            for (std::size_t k = 0; k < width; ++k) out << ',' << (k < e.std_error.size() ? num(e.std_error[k]) : "");
            out << ',' << e.n_particles << ',' << e.n_contributing << '\n';
        }
        if (!out) throw std::runtime_error("failed writing results.csv");
    }
    {
        json m;
        m["config"] = config_json(config);
        m["coupled"] = result.coupled;
        json totals;
        totals["epsilon"] = ex.epsilon;
        totals["v"] = ex.total_v;
        totals["v_std_error"] = ex.total_v_se;
        totals["z"] = ex.total_z;
        totals["z_std_error"] = ex.total_z_se;
        m["totals"] = totals;
        json est = json::array();
        for (const auto& e : ex.estimates) {
            est.push_back({{"order", e.order},
                           {"component", to_string(e.component)},
                           {"value", e.value},
                           {"std_error", e.std_error},
                           {"n_particles", e.n_particles},
                           {"n_contributing", e.n_contributing},
                           {"n_nonzero", e.n_nonzero}});
        }
        m["estimates"] = est;
        m["oracle_checks"] = result.checks.size();
        m["all_pass"] = result.all_pass();
        std::ofstream out(base / "manifest.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write manifest.json");
        out << m.dump(2) << '\n';
    }
    if (!result.checks.empty()) write_oracle_csv(result, (base / "oracle.csv").string());
}

}  // namespace pertfbsde
