// Python bindings for the main operations.

#include "pertfbsde/cascade.hpp"
#include "pertfbsde/coupled.hpp"
#include "pertfbsde/errors.hpp"
#include "pertfbsde/experiment.hpp"
#include "pertfbsde/oracle.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace pertfbsde;

namespace {

py::dict estimate_dict(const OrderEstimate& e) {
    py::dict d;
    d["order"] = e.order;
    d["component"] = to_string(e.component);
    d["value"] = e.value;
    d["std_error"] = e.std_error;
    d["n_particles"] = e.n_particles;
    d["n_contributing"] = e.n_contributing;
    d["n_nonzero"] = e.n_nonzero;
    return d;
}

py::dict result_dict(const ExperimentResult& r) {
    py::list est;
    for (const auto& e : r.expansion.estimates) est.append(estimate_dict(e));
    py::list checks;
    for (const auto& c : r.checks) {
        py::dict d;
        d["estimator"] = c.estimator;
        d["oracle_value"] = c.oracle_value;
        d["mc_value"] = c.mc_value;
        d["abs_diff"] = c.abs_diff;
        d["combined_se"] = c.combined_se;
        d["tolerance"] = c.tolerance;
        d["passed"] = c.pass;
        checks.append(d);
    }
    py::dict d;
    d["estimates"] = est;
    d["checks"] = checks;
    d["coupled"] = r.coupled;
    d["epsilon"] = r.expansion.epsilon;
    d["total_v"] = r.expansion.total_v;
    d["total_v_se"] = r.expansion.total_v_se;
    d["total_z"] = r.expansion.total_z;
    d["total_z_se"] = r.expansion.total_z_se;
    d["all_pass"] = r.all_pass();
    return d;
}

Component parse_component(const std::string& c) {
    if (c == "V" || c == "v") return Component::V;
    if (c == "Z" || c == "z") return Component::Z;
    throw ConfigError("component must be 'V' or 'Z', got '" + c + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Perturbative Monte Carlo solver for forward-backward SDEs";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<OracleError>(m, "OracleError", PyExc_RuntimeError);
    py::register_exception<SimulationError>(m, "SimulationError", PyExc_RuntimeError);

    m.def("catalog_names", &catalog_names, "Names of the builtin models.");
    m.def("catalog_description", &catalog_description, py::arg("name"));

    m.def(
        "resolve_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
        py::arg("config_json"), "Validate a JSON run configuration and return it with defaults filled in.");

    m.def(
        "run",
        [](const std::string& text, const std::string& out_dir) {
            const RunConfig c = parse_config(text);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(c);
                if (!out_dir.empty()) write_report(r, c, out_dir);
            }
            return result_dict(r);
        },
        py::arg("config_json"), py::arg("out_dir") = std::string(),
        "Run estimators and configured oracles; write report files when out_dir is given.");

    m.def(
        "estimate",
        [](const std::string& model, const ParamMap& params, const std::string& component, int order,
           std::vector<double> x0, double t, std::size_t n_particles, std::uint64_t seed, double lambda,
           double base_step, int workers) {
            const CatalogEntry e = builtin_model(model, params);
            CascadeConfig c;
            c.t = t;
            c.n_particles = n_particles;
            c.seed = seed;
            c.lambda = lambda;
            c.base_step = base_step;
            c.workers = workers;
            OrderEstimate r;
            {
                py::gil_scoped_release release;
                if (e.model.coupled()) {
                    const Component comp = parse_component(component);
                    if (order == 0) {
                        const ModelSpec free = e.model.without_feedback();
                        r = comp == Component::V ? estimate_v0(free, e.zeroth, x0, c) : estimate_z0(free, e.zeroth, x0, c);
                    } else {
                        const CoupledSources s = build_sources(e.model, e.zeroth);
                        if (comp == Component::V && order == 1) r = estimate_v1_coupled(s, x0, c);
                        else if (comp == Component::V && order == 2) r = estimate_v2_coupled(s, x0, c);
                        else if (comp == Component::Z && order == 1) r = estimate_z1_coupled(s, x0, c);
                        else throw ConfigError("coupled models support V orders 0..2 and Z orders 0..1");
                    }
                } else {
                    r = estimate(parse_component(component), order, e.model, e.zeroth, x0, c);
                }
            }
            return estimate_dict(r);
        },
        py::arg("model"), py::arg("params") = ParamMap{}, py::arg("component") = "V", py::arg("order") = 1,
        py::arg("x0") = std::vector<double>{0.0}, py::arg("t") = 0.0, py::arg("n_particles") = 10000,
        py::arg("seed") = 1, py::arg("lambda_") = 0.0, py::arg("base_step") = 0.0, py::arg("workers") = 1,
        "One expansion term of a catalog model.");

    m.def(
        "solve_pde",
        [](const std::string& model, const ParamMap& params, double x_min, double x_max, int n_space, int n_time,
           double epsilon, const std::string& boundary, double t0) {
            const CatalogEntry e = builtin_model(model, params);
            Grid1D g;
            g.x_min = x_min;
            g.x_max = x_max;
            g.n_space = n_space;
            g.n_time = n_time;
            g.boundary = parse_boundary(boundary);
            ValueSurface s;
            {
                py::gil_scoped_release release;
                s = solve_semilinear_pde(e.model, g, epsilon, t0);
            }
            const std::size_t nx = s.xs.size();
            py::dict d;
            d["x"] = s.xs;
            d["v"] = std::vector<double>(s.v.begin(), s.v.begin() + static_cast<std::ptrdiff_t>(nx));
            d["z"] = std::vector<double>(s.z.begin(), s.z.begin() + static_cast<std::ptrdiff_t>(nx));
            return d;
        },
        py::arg("model"), py::arg("params") = ParamMap{}, py::arg("x_min") = -1.0, py::arg("x_max") = 1.0,
        py::arg("n_space") = 201, py::arg("n_time") = 200, py::arg("epsilon") = 1.0,
        py::arg("boundary") = "linear-extrapolation", py::arg("t0") = 0.0,
        "Crank-Nicolson solution of the semilinear PDE at the start time.");

    m.def(
        "quadrature_v1",
        [](const std::string& model, const ParamMap& params, double t, double x) {
            const CatalogEntry e = builtin_model(model, params);
            return quadrature_v1(e.model, e.zeroth, t, x);
        },
        py::arg("model"), py::arg("params") = ParamMap{}, py::arg("t") = 0.0, py::arg("x") = 0.0);

    m.def(
        "ode_coefficients",
        [](const std::string& model, const ParamMap& params, double horizon, double epsilon, int orders) {
            const CatalogEntry e = builtin_model(model, params);
            Jet psi(1, 1);
            const std::vector<double> x{0.0};
            e.model.terminal(e.model.horizon, x, 0, psi);
            const OdeReduction r = ode_reduction(scalar_driver(e.model), psi.value[0], horizon, epsilon, orders);
            py::dict d;
            d["exact"] = r.exact;
            d["coefficients"] = r.coefficients;
            return d;
        },
        py::arg("model"), py::arg("params") = ParamMap{}, py::arg("horizon") = 1.0, py::arg("epsilon") = 1.0,
        py::arg("orders") = 3, "Taylor coefficients of the x-free reduction of a state-independent model.");
}
