#include "pertfbsde/coupled.hpp"

#include "cascade_detail.hpp"

#include <cmath>
#include <memory>

namespace pertfbsde {

using detail::any_nonzero;
using detail::contract;
using detail::mat_mul;

CoupledSources::CoupledSources(const ModelSpec& model, const ZerothOrderFunctions& zeroth)
    : model_(&model), zeroth_(&zeroth) {
    validate(model);
    if (!zeroth.value || !zeroth.martingale) throw ConfigError("order-0 functions are missing v0 or z0");
    const int d = model.dim_x;
    const int r = model.dim_w;
    v0_.resize(1, d);
    z0_.resize(r, d);
    vol_.resize(d * r, d);
    f_.resize(1, model.driver_vars());
    mu_.resize(d, model.driver_vars());
    eta_.resize(d * r, model.driver_vars());
    xs_.resize(static_cast<std::size_t>(d));
}

void CoupledSources::enable_only(G2Term term) {
    g2_enabled.fill(false);
    g2_enabled[static_cast<std::size_t>(term)] = true;
}

void CoupledSources::evaluate(double t, std::span<const double> x, int order) {
    const ModelSpec& m = *model_;
    v0_.clear(2);
    zeroth_->value(t, x, 2, v0_);
    z0_.clear(0);
    zeroth_->martingale(t, x, 0, z0_);
    vol_.clear(0);
    m.vol_free(t, x, 0, vol_);
    const double v0 = v0_.value[0];
    f_.clear(order);
    m.driver(t, x, v0, z0_.value, order, f_);
    mu_.clear(order);
    if (m.drift_feedback) m.drift_feedback(t, x, v0, z0_.value, order, mu_);
    eta_.clear(order);
    if (m.vol_feedback) m.vol_feedback(t, x, v0, z0_.value, order, eta_);
}

double CoupledSources::g1(double t, std::span<const double> x) {
    evaluate(t, x, 0);
    const int d = model_->dim_x;
    const int r = model_->dim_w;
    double g = f_.value[0];
    for (int i = 0; i < d; ++i) g += v0_.d1(0, i) * mu_.value[static_cast<std::size_t>(i)];
    if (model_->vol_feedback) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                double se = 0.0;
                for (int a = 0; a < r; ++a) {
                    se += vol_.value[static_cast<std::size_t>(i) * r + a] * eta_.value[static_cast<std::size_t>(j) * r + a];
                }
                g += v0_.d2(0, i, j) * se;
            }
        }
    }
    return g;
}

void CoupledSources::g1_derivatives(double t, std::span<const double> x, std::vector<double>& grad,
                                    std::vector<double>& hess) {
    const int d = model_->dim_x;
    grad.assign(static_cast<std::size_t>(d), 0.0);
    hess.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> xs(x.begin(), x.end());
    std::vector<double> h(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) h[static_cast<std::size_t>(i)] = fd_step * std::max(1.0, std::abs(x[static_cast<std::size_t>(i)]));
    const double g0 = g1(t, xs);
    for (int i = 0; i < d; ++i) {
        const std::size_t ii = static_cast<std::size_t>(i);
        xs[ii] = x[ii] + h[ii];
        const double gp = g1(t, xs);
        xs[ii] = x[ii] - h[ii];
        const double gm = g1(t, xs);
        xs[ii] = x[ii];
        grad[ii] = (gp - gm) / (2.0 * h[ii]);
        hess[ii * d + ii] = (gp - 2.0 * g0 + gm) / (h[ii] * h[ii]);
    }
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            const std::size_t ii = static_cast<std::size_t>(i);
            const std::size_t jj = static_cast<std::size_t>(j);
            double acc = 0.0;
            for (int si : {1, -1}) {
                for (int sj : {1, -1}) {
                    xs[ii] = x[ii] + si * h[ii];
                    xs[jj] = x[jj] + sj * h[jj];
                    acc += si * sj * g1(t, xs);
                }
            }
            xs[ii] = x[ii];
            xs[jj] = x[jj];
            const double hij = acc / (4.0 * h[ii] * h[jj]);
            hess[ii * d + jj] = hij;
            hess[jj * d + ii] = hij;
        }
    }
}

std::vector<double> CoupledSources::eta_correction(double t, std::span<const double> x) {
    evaluate(t, x, 0);
    const int d = model_->dim_x;
    const int r = model_->dim_w;
    std::vector<double> out(static_cast<std::size_t>(r), 0.0);
    if (!model_->vol_feedback) return out;
    for (int a = 0; a < r; ++a) {
        for (int i = 0; i < d; ++i) {
            out[static_cast<std::size_t>(a)] += v0_.d1(0, i) * eta_.value[static_cast<std::size_t>(i) * r + a];
        }
    }
    return out;
}

G2Coefficients CoupledSources::g2_coefficients(double t, std::span<const double> x) {
    const ModelSpec& m = *model_;
    require_order(m.driver_order, 1, "driver (coupled order 2)");
    if (m.drift_feedback) require_order(m.drift_feedback_order, 1, "drift_feedback (coupled order 2)");
    if (m.vol_feedback) require_order(m.vol_feedback_order, 1, "vol_feedback (coupled order 2)");
    evaluate(t, x, 1);
    const int d = m.dim_x;
    const int r = m.dim_w;
    const int iv = d;
    const auto iz = [d](int a) { return d + 1 + a; };
    const auto on = [this](G2Term k) { return g2_enabled[static_cast<std::size_t>(k)]; };
    const auto sig = [&](int i, int a) { return vol_.value[static_cast<std::size_t>(i) * r + a]; };

    G2Coefficients c;
    c.cz.assign(static_cast<std::size_t>(r), 0.0);
    c.mu.assign(static_cast<std::size_t>(d), 0.0);
    c.se.assign(static_cast<std::size_t>(d) * d, 0.0);
    c.eta_corr.assign(static_cast<std::size_t>(r), 0.0);

    for (int a = 0; a < r; ++a) {
        for (int i = 0; i < d; ++i) {
            c.eta_corr[static_cast<std::size_t>(a)] += v0_.d1(0, i) * eta_.value[static_cast<std::size_t>(i) * r + a];
        }
    }
    if (on(G2Term::T1)) {
        c.cv += f_.d1(0, iv);
        for (int a = 0; a < r; ++a) c.cz[static_cast<std::size_t>(a)] += f_.d1(0, iz(a));
    }
    if (on(G2Term::T2)) {
        for (int i = 0; i < d; ++i) c.mu[static_cast<std::size_t>(i)] = mu_.value[static_cast<std::size_t>(i)];
    }
    if (on(G2Term::T3)) {
        for (int i = 0; i < d; ++i) {
            const double dv0 = v0_.d1(0, i);
            c.cv += dv0 * mu_.d1(i, iv);
            for (int a = 0; a < r; ++a) c.cz[static_cast<std::size_t>(a)] += dv0 * mu_.d1(i, iz(a));
        }
    }
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const double h0 = v0_.d2(0, i, j);
            if (on(G2Term::T4)) {
                double se = 0.0;
                for (int b = 0; b < r; ++b) se += sig(i, b) * eta_.value[static_cast<std::size_t>(j) * r + b];
                c.se[static_cast<std::size_t>(i) * d + j] = se;
            }
            if (h0 == 0.0) continue;
            if (on(G2Term::T5)) {
                double ee = 0.0;
                for (int b = 0; b < r; ++b) {
                    ee += eta_.value[static_cast<std::size_t>(i) * r + b] * eta_.value[static_cast<std::size_t>(j) * r + b];
                }
                c.explicit_part += 0.5 * h0 * ee;
            }
            if (on(G2Term::T6)) {
                for (int b = 0; b < r; ++b) {
                    const int o = j * r + b;
                    c.cv += h0 * sig(i, b) * eta_.d1(o, iv);
                    for (int a = 0; a < r; ++a) c.cz[static_cast<std::size_t>(a)] += h0 * sig(i, b) * eta_.d1(o, iz(a));
                }
            }
        }
    }
    return c;
}

CoupledSources build_sources(const ModelSpec& model, const ZerothOrderFunctions& zeroth) {
    require_order(zeroth.value_order, 2, "v0 (coupled sources use d_ij v0)");
    return CoupledSources(model, zeroth);
}

namespace {

struct CoupledWorker {
    CoupledSources src;
    detail::RunSetup run;
    PathSimulator sim;
    Jet vol;
    std::vector<double> gamma_t, g1, m, grad, hess;

    CoupledWorker(const CoupledSources& s, const detail::RunSetup& setup)
        : src(s), run(setup), sim(s.model()), vol(setup.d * setup.r, setup.d) {
        detail::eval_vol(s.model(), setup.t, setup.x_t, 0, vol);
        gamma_t.assign(vol.value.begin(), vol.value.end());
        g1.resize(gamma_t.size());
        m.resize(gamma_t.size());
    }

    double w(double a, double s, double raw) const { return weight_fhat(run.lambda, a, s, raw); }
};

template <class Body>
SamplerFactory make_factory(const CoupledSources& sources, const detail::RunSetup& run, Body body) {
    return [sources, run, body]() -> CascadeSampler {
        auto w = std::make_shared<CoupledWorker>(sources, run);
        return [w, body](RngStream& rng, std::span<double> out) { return body(*w, rng, out); };
    };
}

bool sample_v1c(CoupledWorker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 1);
    RngStream path = rng.split();
    if (!sched.inside(0)) return false;
    const double tau = sched.taus[0];
    w.sim.reset(s.t, s.x_t, s.T, s.step);
    w.sim.advance_to(tau, path);
    out[0] = w.w(s.t, tau, w.src.g1(tau, w.sim.state()));
    return true;
}

bool sample_z1c(CoupledWorker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 1);
    RngStream path = rng.split();
    if (!sched.inside(0)) return false;
    const double tau = sched.taus[0];
    w.sim.reset(s.t, s.x_t, s.T, s.step);
    const FlowId y = w.sim.spawn_first(s.t);
    w.sim.advance_to(tau, path);
    w.src.g1_derivatives(tau, w.sim.state(), w.grad, w.hess);
    mat_mul(w.sim.flow(y), w.gamma_t, s.d, s.r, w.m);
    for (int a = 0; a < s.r; ++a) out[static_cast<std::size_t>(a)] = w.w(s.t, tau, contract(w.m, w.grad, s.d, s.r, a));
    return true;
}

bool sample_v2c(CoupledWorker& w, RngStream& rng, std::span<double> out) {
    const auto& s = w.run;
    const int d = s.d;
    const int r = s.r;
    const InteractionSchedule sched = sample_interactions(s.lambda, s.t, s.T, rng, 2);
    RngStream path = rng.split();
    if (!sched.inside(0)) return false;
    const double t1 = sched.taus[0];
    const double t2 = sched.taus[1];
    w.sim.reset(s.t, s.x_t, s.T, s.step);
    w.sim.advance_to(t1, path);
    const G2Coefficients c = w.src.g2_coefficients(t1, w.sim.state());
    detail::eval_vol(w.src.model(), t1, w.sim.state(), 0, w.vol);
    std::copy(w.vol.value.begin(), w.vol.value.end(), w.g1.begin());

    // Terms known at tau_1: the eta part of z1 and T5.
    double at_t1 = c.explicit_part;
    for (int a = 0; a < r; ++a) at_t1 += c.cz[static_cast<std::size_t>(a)] * c.eta_corr[static_cast<std::size_t>(a)];

    double at_t2 = 0.0;
    const bool need_flow = any_nonzero(c.cz) || any_nonzero(c.mu) || any_nonzero(c.se);
    const bool need_second = any_nonzero(c.se);
    if (sched.inside(1) && (c.cv != 0.0 || need_flow)) {
        const FlowId y = w.sim.spawn_first(t1);
        const FlowId g = need_second ? w.sim.spawn_second(t1, y, y) : -1;
        w.sim.advance_to(t2, path);
        const auto x2 = w.sim.state();
        double v = c.cv * w.src.g1(t2, x2);
        if (need_flow) {
            w.src.g1_derivatives(t2, x2, w.grad, w.hess);
            const auto Y = w.sim.flow(y);
            // z1 transport: (Y sigma_{tau1}) . d G1
            mat_mul(Y, w.g1, d, r, w.m);
            for (int a = 0; a < r; ++a) v += c.cz[static_cast<std::size_t>(a)] * contract(w.m, w.grad, d, r, a);
            // d_i v1 mu^i: mu^i Y^j_i d_j G1
            for (int i = 0; i < d; ++i) {
                const double mi = c.mu[static_cast<std::size_t>(i)];
                if (mi == 0.0) continue;
                for (int j = 0; j < d; ++j) v += mi * Y[static_cast<std::size_t>(j) * d + i] * w.grad[static_cast<std::size_t>(j)];
            }
            // d_ij v1 se_ij: Gamma^k_ij d_k G1 + Y^k_i Y^l_j d_kl G1
            if (need_second) {
                const auto G = w.sim.second_flow(g);
                for (int i = 0; i < d; ++i) {
                    for (int j = 0; j < d; ++j) {
                        const double se = c.se[static_cast<std::size_t>(i) * d + j];
                        if (se == 0.0) continue;
                        double acc = 0.0;
                        for (int k = 0; k < d; ++k) {
                            acc += G[(static_cast<std::size_t>(k) * d + i) * d + j] * w.grad[static_cast<std::size_t>(k)];
                            for (int l = 0; l < d; ++l) {
                                acc += Y[static_cast<std::size_t>(k) * d + i] * Y[static_cast<std::size_t>(l) * d + j] *
                                       w.hess[static_cast<std::size_t>(k) * d + l];
                            }
                        }
                        v += se * acc;
                    }
                }
            }
        }
        at_t2 = w.w(t1, t2, v);
    }
    out[0] = w.w(s.t, t1, at_t1 + at_t2);
    return true;
}

OrderEstimate run(Component component, int order, const SamplerFactory& factory, const CoupledSources& src,
                  const CascadeConfig& config) {
    McConfig mc{config.n_particles, config.seed, estimator_stream(component, order, true, config.replica),
                config.workers};
    const int dims = component == Component::V ? 1 : src.model().dim_w;
    return make_estimate(order, component, run_cascades(factory, dims, mc));
}

}  // namespace

SamplerFactory coupled_v1_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    return make_factory(sources, detail::resolve(sources.model(), x_t, config), sample_v1c);
}

SamplerFactory coupled_z1_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    return make_factory(sources, detail::resolve(sources.model(), x_t, config), sample_z1c);
}

SamplerFactory coupled_v2_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    return make_factory(sources, detail::resolve(sources.model(), x_t, config), sample_v2c);
}

OrderEstimate estimate_v1_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    return run(Component::V, 1, coupled_v1_sampler(sources, x_t, config), sources, config);
}

OrderEstimate estimate_z1_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    OrderEstimate e = run(Component::Z, 1, coupled_z1_sampler(sources, x_t, config), sources, config);
    CoupledSources local = sources;
    const std::vector<double> corr = local.eta_correction(config.t, x_t);
    for (std::size_t a = 0; a < e.value.size(); ++a) e.value[a] += corr[a];
    return e;
}

OrderEstimate estimate_v2_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config) {
    return run(Component::V, 2, coupled_v2_sampler(sources, x_t, config), sources, config);
}

}  // namespace pertfbsde
