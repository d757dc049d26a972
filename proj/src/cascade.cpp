#include "pertfbsde/cascade.hpp"

#include "cascade_detail.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <set>

namespace pertfbsde {

using detail::any_nonzero;
using detail::contract;
using detail::mat_mul;

std::size_t InteractionSchedule::count_inside() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < taus.size(); ++k) n += inside(k) ? 1 : 0;
    return n;
}

InteractionSchedule sample_interactions(double lambda, double t, double T, RngStream& rng, int needed) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError(fmt::format("intensity lambda must be positive, got {}", lambda));
    }
    if (needed < 1) throw ConfigError(fmt::format("needed interaction count must be at least 1, got {}", needed));
    InteractionSchedule s;
    s.lambda = lambda;
    s.t = t;
    s.horizon = T;
    s.taus.reserve(static_cast<std::size_t>(needed));
    double tau = t;
    for (int k = 0; k < needed; ++k) {
        tau += rng.exponential(lambda);
        s.taus.push_back(tau);
    }
    return s;
}

double weight_fhat(double lambda, double t, double s, double raw) {
    if (raw == 0.0) return 0.0;
    return raw * std::exp(lambda * (s - t)) / lambda;
}

double CascadeConfig::resolved_lambda(double T) const {
    if (lambda < 0.0 || !std::isfinite(lambda)) {
        throw ConfigError(fmt::format("intensity lambda must be positive, got {}", lambda));
    }
    return lambda > 0.0 ? lambda : 2.0 / (T - t);
}

double CascadeConfig::resolved_step(double T) const {
    if (base_step < 0.0 || !std::isfinite(base_step)) {
        throw ConfigError(fmt::format("base_step must be positive, got {}", base_step));
    }
    return base_step > 0.0 ? base_step : (T - t) / 200.0;
}

std::uint64_t estimator_stream(Component component, int order, bool coupled, std::uint64_t replica) {
    const std::uint64_t code = (coupled ? 32u : 0u) + (component == Component::Z ? 16u : 0u) +
                               static_cast<std::uint64_t>(order);
    return replica * 64u + code + 1u;
}

namespace {

/// Per-worker scratch shared by all decoupled samplers.
struct Worker {
    const ModelSpec& model;
    const ZerothOrderFunctions& zeroth;
    detail::RunSetup run;
    PathSimulator main;
    PathSimulator branch;
    DriverEvaluator eval;
    Jet vol;
    Jet psi;
    std::vector<double> gamma_t;   // sigma(t, x_t)
    DriverPoint p1, p2, p3;
    std::vector<double> x1;        // state at tau_1
    std::vector<double> g1, dg1, g2, dg2;
    std::vector<double> a0, a2, b, tmp;
    std::vector<double> z2a, zb1, zb2;

    Worker(const ModelSpec& m, const ZerothOrderFunctions& z, const detail::RunSetup& s)
        : model(m), zeroth(z), run(s), main(m), branch(m), eval(m, z), vol(s.d * s.r, s.d), psi(1, s.d) {
        const std::size_t dr = static_cast<std::size_t>(s.d) * s.r;
        detail::eval_vol(m, s.t, s.x_t, 0, vol);
        gamma_t.assign(vol.value.begin(), vol.value.end());
        g1.resize(dr);
        g2.resize(dr);
        dg1.resize(dr * s.d);
        dg2.resize(dr * s.d);
        a0.resize(dr);
        a2.resize(dr);
        b.resize(dr);
        tmp.resize(dr);
        z2a.resize(static_cast<std::size_t>(s.r));
        zb1.resize(static_cast<std::size_t>(s.r));
        zb2.resize(static_cast<std::size_t>(s.r));
    }

    double w(double a, double s, double raw) const { return weight_fhat(run.lambda, a, s, raw); }

    /// sigma and its gradient at (s, x).
    void sigma_at(double s, std::span<const double> x, int order, std::vector<double>& g, std::vector<double>& dg) {
        detail::eval_vol(model, s, x, order, vol);
        std::copy(vol.value.begin(), vol.value.end(), g.begin());
        if (order >= 1) std::copy(vol.grad.begin(), vol.grad.end(), dg.begin());
    }

    /**
     * Unweighted six-term Z(2) integrand. Outer anchor 0 with vol gamma0,
     * first interaction 1 (P1, g1 = sigma, dg1 = d sigma), second 2 (P2).
     * A0 = Y_{0,1} gamma0, A2 = Y_{0,2} gamma0, Y12 = Y_{1,2}, G = Gamma_{0,1,2}.
     */
    void z2_terms(std::span<const double> gamma0, std::span<const double> A0, std::span<const double> A2,
                  std::span<const double> Y12, std::span<const double> G, const DriverPoint& P1,
                  std::span<const double> g1v, std::span<const double> dg1v, const DriverPoint& P2,
                  std::span<double> out) {
        const int d = run.d;
        const int r = run.r;
        mat_mul(Y12, g1v, d, r, b);   // B = Y_{1,2} g1
        for (int a = 0; a < r; ++a) {
            double s = 0.0;
            // 1: nabla(d_v f) at 1 transported by A0, times f at 2.
            double t1 = 0.0;
            for (int j = 0; j < d; ++j) t1 += A0[static_cast<std::size_t>(j) * r + a] * P1.grad_dv[static_cast<std::size_t>(j)];
            s += t1 * P2.value;
            // 2: nabla(d_z f) at 1, then B . nabla f at 2.
            for (int j = 0; j < d; ++j) {
                const double aj = A0[static_cast<std::size_t>(j) * r + a];
                if (aj == 0.0) continue;
                for (int bb = 0; bb < r; ++bb) {
                    s += aj * P1.grad_dz[static_cast<std::size_t>(j) * r + bb] * contract(b, P2.grad, d, r, bb);
                }
            }
            // 3: d_v f at 1, A2 . nabla f at 2.
            s += P1.dv * contract(A2, P2.grad, d, r, a);
            for (int bb = 0; bb < r; ++bb) {
                const double dz = P1.dz[static_cast<std::size_t>(bb)];
                if (dz == 0.0) continue;
                double t4 = 0.0, t5 = 0.0, t6 = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double gi = P2.grad[static_cast<std::size_t>(i)];
                    // 4: (Gamma gamma0)^i_{j,a} g1^j_b
                    for (int j = 0; j < d; ++j) {
                        double gg = 0.0;
                        for (int m = 0; m < d; ++m) {
                            gg += G[(static_cast<std::size_t>(i) * d + m) * d + j] * gamma0[static_cast<std::size_t>(m) * r + a];
                        }
                        t4 += gi * gg * g1v[static_cast<std::size_t>(j) * r + bb];
                    }
                    // 5: Y12^i_k (d_j g1)^k_b A0^j_a
                    for (int k = 0; k < d; ++k) {
                        double dk = 0.0;
                        for (int j = 0; j < d; ++j) {
                            dk += dg1v[(static_cast<std::size_t>(k) * r + bb) * d + j] * A0[static_cast<std::size_t>(j) * r + a];
                        }
                        t5 += gi * Y12[static_cast<std::size_t>(i) * d + k] * dk;
                    }
                }
                // 6: A2^j_a B^i_b nabla_j nabla_i f at 2
                for (int j = 0; j < d; ++j) {
                    const double aj = A2[static_cast<std::size_t>(j) * r + a];
                    if (aj == 0.0) continue;
                    for (int i = 0; i < d; ++i) {
                        t6 += aj * b[static_cast<std::size_t>(i) * r + bb] * P2.hess[static_cast<std::size_t>(j) * d + i];
                    }
                }
                s += dz * (t4 + t5 + t6);
            }
            out[static_cast<std::size_t>(a)] = s;
        }
    }
};

void check_decoupled(const ModelSpec& model) {
    if (model.coupled()) {
        throw ConfigError(fmt::format(
            "model '{}' has feedback coefficients; use the coupled estimators or without_feedback()", model.name));
    }
}

using WorkerPtr = std::shared_ptr<Worker>;

template <class Body>
SamplerFactory make_factory(const ModelSpec& model, const ZerothOrderFunctions& zeroth, const detail::RunSetup& run,
                            Body body) {
    return [&model, &zeroth, run, body]() -> CascadeSampler {
        auto w = std::make_shared<Worker>(model, zeroth, run);
        return [w, body](RngStream& rng, std::span<double> out) { return body(*w, rng, out); };
    };
}

bool sample_v0(Worker& w, RngStream& rng, std::span<double> out) {
    RngStream path = rng.split();
    const auto& s = w.run;
    w.main.reset(s.t, s.x_t, s.T, s.step);
    w.main.advance_to(s.T, path);
    w.psi.clear(0);
    w.model.terminal(s.T, w.main.state(), 0, w.psi);
    out[0] = w.psi.value[0];
    return true;
}

bool sample_z0(Worker& w, RngStream& rng, std::span<double> out) {
    RngStream path = rng.split();
    const auto& s = w.run;
    w.main.reset(s.t, s.x_t, s.T, s.step);
    const FlowId y = w.main.spawn_first(s.t);
    w.main.advance_to(s.T, path);
    w.psi.clear(1);
    w.model.terminal(s.T, w.main.state(), 1, w.psi);
    mat_mul(w.main.flow(y), w.gamma_t, s.d, s.r, w.a0);
    for (int a = 0; a < s.r; ++a) out[static_cast<std::size_t>(a)] = contract(w.a0, w.psi.grad, s.d, s.r, a);
    return true;
}

bool sample_v1(Worker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 1);
    RngStream path = rng.split();
    if (!sched.inside(0)) return false;
    const double tau = sched.taus[0];
    w.main.reset(s.t, s.x_t, s.T, s.step);
    w.main.advance_to(tau, path);
    const DriverPoint& p = w.eval.evaluate(tau, w.main.state(), 0);
    out[0] = w.w(s.t, tau, p.value);
    return true;
}

bool sample_z1(Worker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 1);
    RngStream path = rng.split();
    if (!sched.inside(0)) return false;
    const double tau = sched.taus[0];
    w.main.reset(s.t, s.x_t, s.T, s.step);
    const FlowId y = w.main.spawn_first(s.t);
    w.main.advance_to(tau, path);
    const DriverPoint& p = w.eval.evaluate(tau, w.main.state(), 1);
    mat_mul(w.main.flow(y), w.gamma_t, s.d, s.r, w.a0);
    for (int a = 0; a < s.r; ++a) out[static_cast<std::size_t>(a)] = w.w(s.t, tau, contract(w.a0, p.grad, s.d, s.r, a));
    return true;
}

bool sample_v2(Worker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 2);
    RngStream path = rng.split();
    if (!sched.inside(1)) return false;
    const double t1 = sched.taus[0];
    const double t2 = sched.taus[1];
    w.main.reset(s.t, s.x_t, s.T, s.step);
    w.main.advance_to(t1, path);
    w.p1 = w.eval.evaluate(t1, w.main.state(), 1);
    w.sigma_at(t1, w.main.state(), 0, w.g1, w.dg1);
    const FlowId y = w.main.spawn_first(t1);
    w.main.advance_to(t2, path);
    const DriverPoint& p2 = w.eval.evaluate(t2, w.main.state(), 1);
    double v = w.p1.dv * p2.value;
    if (any_nonzero(w.p1.dz)) {
        mat_mul(w.main.flow(y), w.g1, s.d, s.r, w.b);
        for (int a = 0; a < s.r; ++a) v += w.p1.dz[static_cast<std::size_t>(a)] * contract(w.b, p2.grad, s.d, s.r, a);
    }
    out[0] = w.w(s.t, t1, 1.0) * w.w(t1, t2, v);
    return true;
}

bool sample_z2(Worker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 2);
    RngStream path = rng.split();
    if (!sched.inside(1)) return false;
    const double t1 = sched.taus[0];
    const double t2 = sched.taus[1];
    w.main.reset(s.t, s.x_t, s.T, s.step);
    const FlowId ya = w.main.spawn_first(s.t);
    w.main.advance_to(t1, path);
    w.p1 = w.eval.evaluate(t1, w.main.state(), 2);
    w.sigma_at(t1, w.main.state(), 1, w.g1, w.dg1);
    mat_mul(w.main.flow(ya), w.gamma_t, s.d, s.r, w.a0);
    const FlowId yb = w.main.spawn_first(t1);
    const FlowId g = w.main.spawn_second(t1, ya, yb);
    w.main.advance_to(t2, path);
    w.p2 = w.eval.evaluate(t2, w.main.state(), 2);
    mat_mul(w.main.flow(ya), w.gamma_t, s.d, s.r, w.a2);
    w.z2_terms(w.gamma_t, w.a0, w.a2, w.main.flow(yb), w.main.second_flow(g), w.p1, w.g1, w.dg1, w.p2, out);
    const double weight = w.w(s.t, t1, 1.0) * w.w(t1, t2, 1.0);
    for (auto& o : out) o *= weight;
    return true;
}

/// One independent sub-system started at (t1, x1): returns V1 and fills Z1 (r entries).
double branch_order1(Worker& w, RngStream& path, double t1, double t2, std::span<const double> g1,
                     std::span<double> z) {
    const auto& s = w.run;
    w.branch.reset(t1, w.x1, s.T, s.step);
    const FlowId y = w.branch.spawn_first(t1);
    w.branch.advance_to(t2, path);
    const DriverPoint& p = w.eval.evaluate(t2, w.branch.state(), 1);
    mat_mul(w.branch.flow(y), g1, s.d, s.r, w.tmp);
    for (int a = 0; a < s.r; ++a) z[static_cast<std::size_t>(a)] = w.w(t1, t2, contract(w.tmp, p.grad, s.d, s.r, a));
    return w.w(t1, t2, p.value);
}

bool sample_v3(Worker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 3);
    const double e1 = rng.exponential(s.lambda);
    const double e2 = rng.exponential(s.lambda);
    RngStream path = rng.split();
    RngStream path_b1 = rng.split();
    RngStream path_b2 = rng.split();
    if (!sched.inside(0)) return false;
    const double t1 = sched.taus[0];
    const double t2 = sched.taus[1];
    const double t3 = sched.taus[2];
    const double u1 = t1 + e1;
    const double u2 = t1 + e2;
    const bool first_ok = sched.inside(2);
    const bool second_ok = u1 < s.T && u2 < s.T;
    if (!first_ok && !second_ok) return false;

    w.main.reset(s.t, s.x_t, s.T, s.step);
    w.main.advance_to(t1, path);
    w.p1 = w.eval.evaluate(t1, w.main.state(), 2);
    w.x1.assign(w.main.state().begin(), w.main.state().end());
    w.sigma_at(t1, w.main.state(), 1, w.g1, w.dg1);
    // g1 serves as the outer vol of the re-based order-2 cascade.
    const std::vector<double> gamma1 = w.g1;

    double total = 0.0;
    const bool first_needed = w.p1.dv != 0.0 || any_nonzero(w.p1.dz);
    if (first_ok && first_needed) {
        const bool need_z = any_nonzero(w.p1.dz);
        const FlowId ya = w.main.spawn_first(t1);
        w.main.advance_to(t2, path);
        w.p2 = w.eval.evaluate(t2, w.main.state(), need_z ? 2 : 1);
        w.sigma_at(t2, w.main.state(), need_z ? 1 : 0, w.g2, w.dg2);
        mat_mul(w.main.flow(ya), gamma1, s.d, s.r, w.a0);
        const FlowId yb = w.main.spawn_first(t2);
        const FlowId g = need_z ? w.main.spawn_second(t2, ya, yb) : -1;
        w.main.advance_to(t3, path);
        w.p3 = w.eval.evaluate(t3, w.main.state(), need_z ? 2 : 1);
        const double weight = w.w(t1, t2, 1.0) * w.w(t2, t3, 1.0);

        double v2 = w.p2.dv * w.p3.value;
        if (any_nonzero(w.p2.dz)) {
            mat_mul(w.main.flow(yb), w.g2, s.d, s.r, w.b);
            for (int a = 0; a < s.r; ++a) v2 += w.p2.dz[static_cast<std::size_t>(a)] * contract(w.b, w.p3.grad, s.d, s.r, a);
        }
        double first = w.p1.dv * weight * v2;
        if (need_z) {
            mat_mul(w.main.flow(ya), gamma1, s.d, s.r, w.a2);
            w.z2_terms(gamma1, w.a0, w.a2, w.main.flow(yb), w.main.second_flow(g), w.p2, w.g2, w.dg2, w.p3, w.z2a);
            for (int a = 0; a < s.r; ++a) {
                first += w.p1.dz[static_cast<std::size_t>(a)] * weight * w.z2a[static_cast<std::size_t>(a)];
            }
        }
        total += first;
    }

    const bool second_needed = w.p1.dvv != 0.0 || any_nonzero(w.p1.dvz) || any_nonzero(w.p1.dzz);
    if (second_ok && second_needed) {
        const double v_b1 = branch_order1(w, path_b1, t1, u1, gamma1, w.zb1);
        const double v_b2 = branch_order1(w, path_b2, t1, u2, gamma1, w.zb2);
        double second = 0.5 * w.p1.dvv * v_b1 * v_b2;
        for (int a = 0; a < s.r; ++a) {
            second += w.p1.dvz[static_cast<std::size_t>(a)] * v_b1 * w.zb2[static_cast<std::size_t>(a)];
            for (int bb = 0; bb < s.r; ++bb) {
                second += 0.5 * w.p1.dzz[static_cast<std::size_t>(a) * s.r + bb] * w.zb1[static_cast<std::size_t>(a)] *
                          w.zb2[static_cast<std::size_t>(bb)];
            }
        }
        total += second;
    }
    out[0] = w.w(s.t, t1, total);
    return true;
}

OrderEstimate run_estimator(Component component, int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                            std::span<const double> x_t, const CascadeConfig& config) {
    const SamplerFactory factory =
        component == Component::V ? v_sampler(order, model, zeroth, x_t, config) : z_sampler(order, model, zeroth, x_t, config);
    McConfig mc{config.n_particles, config.seed, estimator_stream(component, order, false, config.replica), config.workers};
    const int dims = component == Component::V ? 1 : model.dim_w;
    return make_estimate(order, component, run_cascades(factory, dims, mc));
}

}  // namespace

SamplerFactory v_sampler(int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                         std::span<const double> x_t, const CascadeConfig& config) {
    check_decoupled(model);
    const detail::RunSetup run = detail::resolve(model, x_t, config);
    switch (order) {
        case 0: return make_factory(model, zeroth, run, sample_v0);
        case 1: return make_factory(model, zeroth, run, sample_v1);
        case 2: return make_factory(model, zeroth, run, sample_v2);
        case 3: return make_factory(model, zeroth, run, sample_v3);
        default: throw ConfigError(fmt::format("V order must be in 0..3, got {}", order));
    }
}

SamplerFactory z_sampler(int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                         std::span<const double> x_t, const CascadeConfig& config) {
    check_decoupled(model);
    const detail::RunSetup run = detail::resolve(model, x_t, config);
    switch (order) {
        case 0:
            require_order(model.terminal_order, 1, "terminal (Z order 0)");
            return make_factory(model, zeroth, run, sample_z0);
        case 1: return make_factory(model, zeroth, run, sample_z1);
        case 2:
            require_order(model.driver_order, 2, "driver (Z order 2, term 6)");
            require_order(zeroth.value_order, 2, "v0 (Z order 2, term 6)");
            require_order(zeroth.martingale_order, 2, "z0 (Z order 2, term 6)");
            return make_factory(model, zeroth, run, sample_z2);
        default: throw ConfigError(fmt::format("Z order must be in 0..2, got {}", order));
    }
}

OrderEstimate estimate_v0(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::V, 0, m, z, x, c);
}
OrderEstimate estimate_z0(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::Z, 0, m, z, x, c);
}
OrderEstimate estimate_v1(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::V, 1, m, z, x, c);
}
OrderEstimate estimate_z1(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::Z, 1, m, z, x, c);
}
OrderEstimate estimate_v2(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::V, 2, m, z, x, c);
}
OrderEstimate estimate_z2(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::Z, 2, m, z, x, c);
}
OrderEstimate estimate_v3(const ModelSpec& m, const ZerothOrderFunctions& z, std::span<const double> x,
                          const CascadeConfig& c) {
    return run_estimator(Component::V, 3, m, z, x, c);
}

OrderEstimate estimate(Component component, int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                       std::span<const double> x_t, const CascadeConfig& config) {
    return run_estimator(component, order, model, zeroth, x_t, config);
}

ZerothReference zeroth_order_reference(const ZerothOrderFunctions& zeroth, const ModelSpec& model, double t,
                                       std::span<const double> x_t) {
    if (static_cast<int>(x_t.size()) != model.dim_x) throw ConfigError("x_t does not match model dimension");
    Jet v(1, model.dim_x), z(model.dim_w, model.dim_x);
    zeroth.value(t, x_t, 0, v);
    zeroth.martingale(t, x_t, 0, z);
    return {v.value[0], z.value};
}

const OrderEstimate* ExpansionResult::find(Component component, int order) const {
    for (const auto& e : estimates) {
        if (e.component == component && e.order == order) return &e;
    }
    return nullptr;
}

ExpansionResult combine_orders(const std::vector<OrderEstimate>& estimates, double epsilon) {
    if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");
    std::set<std::pair<int, int>> seen;
    for (const auto& e : estimates) {
        if (!seen.insert({static_cast<int>(e.component), e.order}).second) {
            throw ConfigError(fmt::format("duplicate estimate for {} order {}", to_string(e.component), e.order));
        }
    }
    ExpansionResult result;
    result.estimates = estimates;
    result.epsilon = epsilon;
    if (!result.find(Component::V, 0)) throw ConfigError("combine_orders requires the V order-0 estimate");

    const auto accumulate = [&](Component c, std::vector<double>& total, std::vector<double>& se) {
        std::vector<double> var;
        for (const auto& e : estimates) {
            if (e.component != c) continue;
            if (total.empty()) {
                total.assign(e.value.size(), 0.0);
                var.assign(e.value.size(), 0.0);
            }
            if (e.value.size() != total.size()) throw ConfigError("estimates of one component differ in width");
            // eps^0 = 1 even for eps = 0.
            const double wgt = e.order == 0 ? 1.0 : std::pow(epsilon, e.order);
            for (std::size_t k = 0; k < total.size(); ++k) {
                total[k] += wgt * e.value[k];
                var[k] += wgt * wgt * e.std_error[k] * e.std_error[k];
            }
        }
        se.resize(var.size());
        for (std::size_t k = 0; k < var.size(); ++k) se[k] = std::sqrt(var[k]);
    };
    accumulate(Component::V, result.total_v, result.total_v_se);
    accumulate(Component::Z, result.total_z, result.total_z_se);
    return result;
}

}  // namespace pertfbsde
