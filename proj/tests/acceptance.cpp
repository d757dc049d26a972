// Acceptance suite: one PASS/FAIL line per criterion, details indented below it.

#include "pertfbsde/cascade.hpp"
#include "pertfbsde/coupled.hpp"
#include "pertfbsde/experiment.hpp"
#include "pertfbsde/oracle.hpp"
#include "pertfbsde/rng.hpp"
#include "pertfbsde/sde.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace pertfbsde;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> details;

void note(const std::string& s) { details.push_back(s); }

bool within(double mc, double expected, double se) { return within_tolerance(mc, expected, se); }

bool check_value(const std::string& label, const OrderEstimate& e, double expected, std::size_t comp = 0) {
    const bool ok = within(e.value[comp], expected, e.std_error[comp]);
    note(fmt::format("{}: {:.10g} (se {:.3g}) expected {:.10g} -> {}", label, e.value[comp], e.std_error[comp], expected,
                     ok ? "ok" : "outside 3 se"));
    return ok;
}

bool check_pair(const std::string& label, const OrderEstimate& a, const OrderEstimate& b) {
    const double se = std::hypot(a.std_error[0], b.std_error[0]);
    const bool ok = within(a.value[0], b.value[0], se);
    note(fmt::format("{}: {:.10g} vs {:.10g} (combined se {:.3g}) -> {}", label, a.value[0], b.value[0], se,
                     ok ? "ok" : "outside 3 se"));
    return ok;
}

CascadeConfig cascade(std::size_t n, std::uint64_t seed, double lambda = 0.0) {
    CascadeConfig c;
    c.n_particles = n;
    c.seed = seed;
    c.lambda = lambda;
    return c;
}

const std::vector<double> x100{100.0};
const std::vector<double> x0{0.0};

// 1. Linear driver: Taylor coefficients of exp(-r_c (T - t)) x0.
bool criterion_linear() {
    const auto e = builtin_model("linear_discount", {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}});
    const auto c = cascade(1000000, 101);
    bool ok = true;
    const double expected[4] = {100.0, -5.0, 0.125, -0.05 * 0.05 * 0.05 / 6.0 * 100.0};
    for (int n = 1; n <= 3; ++n) {
        const auto est = estimate(Component::V, n, e.model, e.zeroth, x100, c);
        ok &= check_value(fmt::format("V{}", n), est, expected[n]);
        if (n <= 2) {
            const double rel = est.std_error[0] / std::abs(est.value[0]);
            note(fmt::format("V{} relative se {:.4f} (limit 0.02)", n, rel));
            ok &= rel < 0.02;
        }
    }
    return ok;
}

// 2. State-independent quadratic driver: coefficients of 1 / (1 - u).
bool criterion_quadratic() {
    const auto e = builtin_model("quadratic_v", {{"K", 1.0}, {"T", 0.5}});
    const auto c = cascade(1000000, 202);
    const OdeReduction ode = ode_reduction(scalar_driver(e.model), 1.0, 0.5, 1.0, 3);
    bool ok = true;
    for (int n = 0; n <= 3; ++n) {
        const auto est = estimate(Component::V, n, e.model, e.zeroth, x0, c);
        ok &= check_value(fmt::format("V{}", n), est, ode.coefficients[static_cast<std::size_t>(n)]);
    }
    for (int n = 0; n <= 2; ++n) {
        const auto z = estimate(Component::Z, n, e.model, e.zeroth, x0, cascade(200000, 203));
        const bool zero = z.n_nonzero == 0 && z.value[0] == 0.0 && z.std_error[0] == 0.0;
        note(fmt::format("Z{}: {} non-zero cascades of {}", n, z.n_nonzero, z.n_particles));
        ok &= zero;
    }
    return ok;
}

// 3. Intensity invariance on criteria 1 and 2.
bool criterion_lambda() {
    bool ok = true;
    const auto lin = builtin_model("linear_discount", {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}});
    const auto quad = builtin_model("quadratic_v", {{"K", 1.0}, {"T", 0.5}});
    struct Case {
        const CatalogEntry* entry;
        const std::vector<double>* x;
        double horizon;
        std::string name;
    };
    for (const Case& cs : {Case{&lin, &x100, 1.0, "linear_discount"}, Case{&quad, &x0, 0.5, "quadratic_v"}}) {
        for (int n = 1; n <= 3; ++n) {
            std::vector<OrderEstimate> runs;
            std::uint64_t seed = 300 + static_cast<std::uint64_t>(n);
            for (double scale : {0.5, 2.0, 8.0}) {
                runs.push_back(estimate(Component::V, n, cs.entry->model, cs.entry->zeroth, *cs.x,
                                        cascade(200000, seed += 10, scale / cs.horizon)));
            }
            ok &= check_pair(fmt::format("{} V{} lambda 0.5 vs 2", cs.name, n), runs[0], runs[1]);
            ok &= check_pair(fmt::format("{} V{} lambda 0.5 vs 8", cs.name, n), runs[0], runs[2]);
            ok &= check_pair(fmt::format("{} V{} lambda 2 vs 8", cs.name, n), runs[1], runs[2]);
        }
    }
    return ok;
}

// 4. Positive-part CVA driver against the Crank-Nicolson solution.
bool criterion_pde() {
    const auto e = builtin_model("cva_positive_part", {{"beta", 0.03}, {"sigma", 0.2}, {"T", 1.0}});
    const auto c = cascade(1000000, 404);
    std::vector<OrderEstimate> est;
    for (int n = 0; n <= 3; ++n) est.push_back(estimate(Component::V, n, e.model, e.zeroth, x100, c));
    const auto total = combine_orders(est, 1.0);
    Grid1D g;
    g.x_min = 100.0 - 6.0 * 20.0;
    g.x_max = 100.0 + 6.0 * 20.0;
    g.n_space = 481;
    g.n_time = 400;
    const double pde = solve_semilinear_pde(e.model, g, 1.0).value(100.0);
    DriverEvaluator ev(e.model, e.zeroth);
    const double rate = std::abs(ev.evaluate(0.0, x100, 1).dv);
    const double bound = std::abs(est[3].value[0]) * rate * 1.0;
    const double se = total.total_v_se[0];
    const double tol = std::max(3.0 * se, bound) + 1e-9 * std::abs(pde);
    const double diff = std::abs(total.total_v[0] - pde);
    note(fmt::format("sum V0..V3 = {:.10g} (se {:.3g}), PDE {:.10g}, exact e^(beta T) x0 = {:.10g}", total.total_v[0], se,
                     pde, std::exp(0.03) * 100.0));
    note(fmt::format("|diff| {:.3g} vs tolerance max(3 se, truncation bound {:.3g}) = {:.3g}", diff, bound, tol));
    return diff <= tol;
}

// 5. First- and second-order flows on geometric Brownian motion.
bool criterion_flows() {
    const auto e = builtin_model("linear_discount", {{"sigma", 0.2}, {"T", 1.0}});
    const double h = 1e-4 * 100.0;
    const std::vector<double> anchors{0.0};
    const std::vector<std::pair<double, double>> seconds{{0.0, 0.0}};
    double max_rel = 0.0;
    const auto grid = build_grid(0.0, 1.0, 1.0 / 200.0);
    for (std::size_t p = 0; p < 1000; ++p) {
        const RngStream base(505, p);
        RngStream r0 = base, rp = base, rm = base;
        const auto path = simulate_path(e.model, x100, grid, r0, anchors);
        const auto up = simulate_path(e.model, std::vector<double>{100.0 + h}, grid, rp);
        const auto dn = simulate_path(e.model, std::vector<double>{100.0 - h}, grid, rm);
        for (std::size_t k = 1; k < path.times.size(); ++k) {
            const double y = path.flow_at(0.0, k)[0];
            const double fd = (up.state_at(k)[0] - dn.state_at(k)[0]) / (2 * h);
            max_rel = std::max(max_rel, std::abs(fd / y - 1.0));
        }
    }
    note(fmt::format("max relative |bump / Y - 1| over 1000 paths: {:.3g} (limit 0.01)", max_rel));

    bool exact = true;
    PathSimulator sim(e.model);
    for (std::size_t p = 0; p < 200; ++p) {
        RngStream rng(506, p);
        const double s1 = 0.1 + 0.8 * rng.uniform();
        sim.reset(0.0, x100, 1.0, 1.0 / 200.0);
        const FlowId y0 = sim.spawn_first(0.0);
        const FlowId y1 = sim.spawn_first(s1);
        const FlowId g = sim.spawn_second(s1, y0, y1);
        sim.advance_to(s1, rng);
        exact &= sim.flow(y1)[0] == 1.0 && sim.second_flow(g)[0] == 0.0;
    }
    note(fmt::format("spawned flows at 200 random anchors: Y = identity and Gamma = 0 bit-exactly: {}", exact));
    return max_rel < 0.01 && exact;
}

// 6. Malliavin-weight Z against bumped V under common random numbers.
bool criterion_bump() {
    const auto e = builtin_model("linear_discount", {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}});
    const auto c = cascade(200000, 606);
    const std::vector<double> sigma{0.2 * 100.0};
    bool ok = true;
    for (int n = 1; n <= 2; ++n) {
        const auto z = estimate(Component::Z, n, e.model, e.zeroth, x100, c);
        const VSamplerBuilder b = [&](std::span<const double> xs) { return v_sampler(n, e.model, e.zeroth, xs, c); };
        const auto rep = check_gradient_vs_bump(b, z, x100, 1e-2 * 100.0, sigma, McConfig{200000, 607, 77, 1});
        note(fmt::format("Z{}: {:.10g} (se {:.3g}) vs sigma dV{}/dx {:.10g} (se {:.3g}) -> {}", n, rep.z_value[0],
                         rep.z_se[0], n, rep.bump_value[0], rep.bump_se[0], rep.pass ? "ok" : "outside 3 se"));
        ok &= rep.pass;
    }
    return ok;
}

// 7. Coupled estimators: decoupled reduction and closed forms.
bool criterion_coupled() {
    bool ok = true;
    auto base = builtin_model("linear_discount", {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}});
    auto wired = base;
    const CoupledFn zero = [](double, std::span<const double>, double, std::span<const double>, int, Jet&) {};
    wired.model.drift_feedback = zero;
    wired.model.vol_feedback = zero;
    const auto src = build_sources(wired.model, wired.zeroth);
    const auto c = cascade(200000, 707);
    ok &= check_pair("mu = eta = 0: V1 coupled vs decoupled", estimate_v1_coupled(src, x100, c),
                     estimate_v1(base.model, base.zeroth, x100, c));
    ok &= check_pair("mu = eta = 0: Z1 coupled vs decoupled", estimate_z1_coupled(src, x100, c),
                     estimate_z1(base.model, base.zeroth, x100, c));
    ok &= check_pair("mu = eta = 0: V2 coupled vs decoupled", estimate_v2_coupled(src, x100, c),
                     estimate_v2(base.model, base.zeroth, x100, c));

    const auto drift = builtin_model("coupled_drift", {{"m", 0.1}, {"sigma", 0.2}, {"r_c", 0.0}, {"T", 1.0}});
    const auto sd = build_sources(drift.model, drift.zeroth);
    ok &= check_value("mu = m: V1 = m (T - t)", estimate_v1_coupled(sd, x0, c), 0.1);
    ok &= check_value("mu = m: V2 = 0", estimate_v2_coupled(sd, x0, c), 0.0);

    const auto vol = builtin_model("coupled_vol", {{"e", 0.1}, {"sigma", 0.2}, {"r_c", 0.0}, {"T", 1.0}});
    const auto sv = build_sources(vol.model, vol.zeroth);
    const auto z = estimate_z1_coupled(sv, x0, c);
    const bool exact = z.value[0] == 0.1 && z.std_error[0] == 0.0;
    note(fmt::format("eta = e: Z1 = {:.17g} with se {:.3g} (expected 0.1 exactly, se 0)", z.value[0], z.std_error[0]));
    return ok && exact;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 8. Byte-identical reports for identical (config, seed, workers).
bool criterion_determinism(const fs::path& out) {
    const std::string doc = R"({"model": "cva_positive_part", "x0": 100, "orders_v": 3, "orders_z": 2,
                                "n_particles": 20000, "seed": 808, "workers": 4, "oracles": ["pde", "bump_z1"]})";
    bool ok = true;
    std::string first[3];
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = out / fmt::format("determinism_{}", run);
        fs::remove_all(dir);
        const RunConfig c = parse_config(doc);
        write_report(run_experiment(c), c, dir.string());
        int k = 0;
        for (const char* f : {"results.csv", "manifest.json", "oracle.csv"}) {
            const std::string bytes = slurp(dir / f);
            if (run == 0) {
                first[k] = bytes;
            } else {
                const bool same = bytes == first[k] && !bytes.empty();
                note(fmt::format("{}: {} bytes, identical: {}", f, bytes.size(), same));
                ok &= same;
            }
            ++k;
        }
    }
    return ok;
}

// 9. Standard error scales as N^(-1/2).
bool criterion_scaling() {
    const auto e = builtin_model("linear_discount", {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}});
    double se[3];
    const std::size_t ns[3] = {10000, 40000, 160000};
    for (int k = 0; k < 3; ++k) {
        se[k] = estimate_v2(e.model, e.zeroth, x100, cascade(ns[k], 909 + static_cast<std::uint64_t>(k))).std_error[0];
        note(fmt::format("N = {}: se(V2) = {:.4g}", ns[k], se[k]));
    }
    bool ok = true;
    for (int k = 0; k < 2; ++k) {
        const double ratio = se[k] / se[k + 1];
        note(fmt::format("se ratio N={} / N={}: {:.4f} (expected 2 +- 20%)", ns[k], ns[k + 1], ratio));
        ok &= ratio >= 1.6 && ratio <= 2.4;
    }
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string out = "acceptance_out";
    std::vector<int> only;
    app.add_option("--out", out, "scratch directory for report files");
    app.add_option("--only", only, "run only these criteria (1-9)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(out);

    const std::vector<std::pair<std::string, std::function<bool()>>> criteria = {
        {"linear-driver Taylor identity", criterion_linear},
        {"ODE reduction on quadratic driver", criterion_quadratic},
        {"lambda invariance", criterion_lambda},
        {"PDE agreement on positive-part driver", criterion_pde},
        {"flow correctness", criterion_flows},
        {"Malliavin vs bump gradient", criterion_bump},
        {"coupled reduction and closed forms", criterion_coupled},
        {"determinism", [&] { return criterion_determinism(out); }},
        {"Monte Carlo scaling", criterion_scaling},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        details.clear();
        const auto start = std::chrono::steady_clock::now();
        bool pass = false;
        try {
            pass = criteria[i].second();
        } catch (const std::exception& e) {
            note(fmt::format("error: {}", e.what()));
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fmt::print("{} criterion {}: {} ({:.1f} s)\n", pass ? "PASS" : "FAIL", id, criteria[i].first, secs);
        for (const auto& d : details) fmt::print("    {}\n", d);
        std::fflush(stdout);
        if (!pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
