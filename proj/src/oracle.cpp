#include "pertfbsde/oracle.hpp"

#include "pertfbsde/errors.hpp"
#include "pertfbsde/sde.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace pertfbsde {

bool within_tolerance(double a, double b, double se) {
    return std::abs(a - b) <= 3.0 * se + 1e-9 * std::max(1.0, std::abs(b));
}

Boundary parse_boundary(const std::string& name) {
    if (name == "linear-extrapolation") return Boundary::LinearExtrapolation;
    if (name == "dirichlet-from-payoff") return Boundary::DirichletFromPayoff;
    throw ConfigError(fmt::format("unknown boundary '{}'; expected linear-extrapolation or dirichlet-from-payoff", name));
}

std::string to_string(Boundary b) {
    return b == Boundary::LinearExtrapolation ? "linear-extrapolation" : "dirichlet-from-payoff";
}

void Grid1D::validate() const {
    if (n_space < 3) throw ConfigError(fmt::format("n_space must be at least 3, got {}", n_space));
    if (n_time < 1) throw ConfigError(fmt::format("n_time must be at least 1, got {}", n_time));
    if (!(x_min < x_max)) throw ConfigError(fmt::format("x_min must be below x_max, got [{}, {}]", x_min, x_max));
}

double ValueSurface::interpolate(std::size_t k, double x) const {
    if (k >= times.size()) throw ConfigError("time index outside the surface");
    if (x < xs.front() || x > xs.back()) {
        throw ConfigError(fmt::format("x={} outside the grid [{}, {}]", x, xs.front(), xs.back()));
    }
    const double h = xs[1] - xs[0];
    const std::size_t i = std::min(static_cast<std::size_t>((x - xs.front()) / h), xs.size() - 2);
    const double s = (x - xs[i]) / h;
    return (1.0 - s) * at(k, i) + s * at(k, i + 1);
}

void ValueSurface::write_csv(std::ostream& os) const {
    os << "t,x,v\n";
    for (std::size_t k = 0; k < times.size(); ++k) {
        for (std::size_t i = 0; i < xs.size(); ++i) os << fmt::format("{:.17g},{:.17g},{:.17g}\n", times[k], xs[i], at(k, i));
    }
}

namespace {

/// Solve a tridiagonal system in place (Thomas algorithm). lower[0], upper[n-1] unused.
void thomas(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
            std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

/// Coefficients of the spatial operator and the driver along one time level.
struct Level {
    std::vector<double> a, b, z, f;
};

class PdeStepper {
public:
    PdeStepper(const ModelSpec& model, const Grid1D& grid, double eps)
        : m_(model), g_(grid), eps_(eps), n_(static_cast<std::size_t>(grid.n_space)), h_(grid.dx()),
          r1_(1, 1), s1_(1, 1), f1_(1, 3), mu1_(1, 3), eta1_(1, 3) {
        xs_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) xs_[i] = grid.node(static_cast<int>(i));
    }

    const std::vector<double>& xs() const { return xs_; }

    double dvdx(const std::vector<double>& q, std::size_t i) const {
        if (i == 0) return (q[1] - q[0]) / h_;
        if (i == n_ - 1) return (q[n_ - 1] - q[n_ - 2]) / h_;
        return (q[i + 1] - q[i - 1]) / (2.0 * h_);
    }

    void coefficients(double s, const std::vector<double>& q, Level& lv) {
        lv.a.resize(n_);
        lv.b.resize(n_);
        lv.z.resize(n_);
        lv.f.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            const std::span<const double> xv(&xs_[i], 1);
            r1_.clear(0);
            m_.drift_free(s, xv, 0, r1_);
            s1_.clear(0);
            m_.vol_free(s, xv, 0, s1_);
            const double vx = dvdx(q, i);
            double gamma = s1_.value[0];
            double z = vx * gamma;
            if (m_.vol_feedback && eps_ != 0.0) {
                // z enters eta; a few fixed-point sweeps settle z = v_x (sigma + eps eta(z)).
                for (int it = 0; it < 8; ++it) {
                    eta1_.clear(0);
                    m_.vol_feedback(s, xv, q[i], std::span<const double>(&z, 1), 0, eta1_);
                    gamma = s1_.value[0] + eps_ * eta1_.value[0];
                    z = vx * gamma;
                }
            }
            double drift = r1_.value[0];
            if (m_.drift_feedback && eps_ != 0.0) {
                mu1_.clear(0);
                m_.drift_feedback(s, xv, q[i], std::span<const double>(&z, 1), 0, mu1_);
                drift += eps_ * mu1_.value[0];
            }
            f1_.clear(0);
            m_.driver(s, xv, q[i], std::span<const double>(&z, 1), 0, f1_);
            lv.a[i] = drift;
            lv.b[i] = 0.5 * gamma * gamma;
            lv.z[i] = z;
            lv.f[i] = f1_.value[0];
        }
    }

    /// L u at node i with the coefficients of `lv`.
    double apply(const Level& lv, const std::vector<double>& u, std::size_t i) const {
        if (i == 0) return lv.a[0] * (u[1] - u[0]) / h_;
        if (i == n_ - 1) return lv.a[i] * (u[i] - u[i - 1]) / h_;
        return lv.a[i] * (u[i + 1] - u[i - 1]) / (2.0 * h_) + lv.b[i] * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h_ * h_);
    }

    /// One backward step from w at s1 to u at s0.
    void step(double s0, double s1, const std::vector<double>& w, std::vector<double>& u, std::size_t step_index) {
        const double dt = s1 - s0;
        coefficients(s1, w, lw_);
        std::vector<double> base(n_);
        for (std::size_t i = 0; i < n_; ++i) base[i] = w[i] + 0.5 * dt * (apply(lw_, w, i) + eps_ * lw_.f[i]);

        std::vector<double> q = w;
        std::vector<double> lower(n_), diag(n_), upper(n_), rhs(n_);
        const bool dirichlet = g_.boundary == Boundary::DirichletFromPayoff;
        Jet psi(1, 1);
        double psi_lo = 0.0, psi_hi = 0.0;
        if (dirichlet) {
            psi.clear(0);
            m_.terminal(m_.horizon, std::span<const double>(&xs_[0], 1), 0, psi);
            psi_lo = psi.value[0];
            psi.clear(0);
            m_.terminal(m_.horizon, std::span<const double>(&xs_[n_ - 1], 1), 0, psi);
            psi_hi = psi.value[0];
        }
        for (int iter = 1; iter <= 50; ++iter) {
            coefficients(s0, q, lq_);
            const double k = 0.5 * dt;
            for (std::size_t i = 1; i + 1 < n_; ++i) {
                const double lo = -lq_.a[i] / (2.0 * h_) + lq_.b[i] / (h_ * h_);
                const double up = lq_.a[i] / (2.0 * h_) + lq_.b[i] / (h_ * h_);
                const double di = -2.0 * lq_.b[i] / (h_ * h_);
                lower[i] = -k * lo;
                diag[i] = 1.0 - k * di;
                upper[i] = -k * up;
                rhs[i] = base[i] + k * eps_ * lq_.f[i];
            }
            if (dirichlet) {
                diag[0] = 1.0;
                upper[0] = 0.0;
                rhs[0] = psi_lo;
                lower[n_ - 1] = 0.0;
                diag[n_ - 1] = 1.0;
                rhs[n_ - 1] = psi_hi;
            } else {
                diag[0] = 1.0 + k * lq_.a[0] / h_;
                upper[0] = -k * lq_.a[0] / h_;
                rhs[0] = base[0] + k * eps_ * lq_.f[0];
                lower[n_ - 1] = k * lq_.a[n_ - 1] / h_;
                diag[n_ - 1] = 1.0 - k * lq_.a[n_ - 1] / h_;
                rhs[n_ - 1] = base[n_ - 1] + k * eps_ * lq_.f[n_ - 1];
            }
            thomas(lower, diag, upper, rhs);
            double diff = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                if (!std::isfinite(rhs[i])) {
                    throw OracleError(fmt::format("PDE solution became non-finite at step {}", step_index));
                }
                diff = std::max(diff, std::abs(rhs[i] - q[i]));
            }
            q.swap(rhs);
            if (diff < 1e-10) {
                u = q;
                return;
            }
        }
        throw OracleError(fmt::format("Picard iteration did not converge in 50 iterations at step {} (t={})",
                                      step_index, s0));
    }

    void z_level(double s, const std::vector<double>& u, std::vector<double>& z) {
        coefficients(s, u, lq_);
        z = lq_.z;
    }

private:
    const ModelSpec& m_;
    const Grid1D& g_;
    double eps_;
    std::size_t n_;
    double h_;
    std::vector<double> xs_;
    Jet r1_, s1_, f1_, mu1_, eta1_;
    Level lw_, lq_;
};

}  // namespace

ValueSurface solve_semilinear_pde(const ModelSpec& model, const Grid1D& grid, double epsilon, double t0) {
    validate(model);
    grid.validate();
    if (model.dim_x != 1 || model.dim_w != 1) throw ConfigError("the PDE oracle requires d = r = 1");
    if (!(t0 < model.horizon)) throw ConfigError("PDE start time must be below the horizon");
    if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");

    PdeStepper stepper(model, grid, epsilon);
    const std::size_t n = static_cast<std::size_t>(grid.n_space);
    const std::size_t nt = static_cast<std::size_t>(grid.n_time);
    ValueSurface out;
    out.xs = stepper.xs();
    out.times.resize(nt + 1);
    for (std::size_t k = 0; k <= nt; ++k) {
        out.times[k] = k == nt ? model.horizon : t0 + (model.horizon - t0) * static_cast<double>(k) / static_cast<double>(nt);
    }
    out.v.assign((nt + 1) * n, 0.0);
    out.z.assign((nt + 1) * n, 0.0);

    std::vector<double> w(n), u(n), z;
    Jet psi(1, 1);
    for (std::size_t i = 0; i < n; ++i) {
        psi.clear(0);
        model.terminal(model.horizon, std::span<const double>(&out.xs[i], 1), 0, psi);
        w[i] = psi.value[0];
    }
    const auto store = [&](std::size_t k, const std::vector<double>& vals) {
        std::copy(vals.begin(), vals.end(), out.v.begin() + static_cast<std::ptrdiff_t>(k * n));
        stepper.z_level(out.times[k], vals, z);
        std::copy(z.begin(), z.end(), out.z.begin() + static_cast<std::ptrdiff_t>(k * n));
    };
    store(nt, w);
    for (std::size_t k = nt; k-- > 0;) {
        stepper.step(out.times[k], out.times[k + 1], w, u, nt - k);
        store(k, u);
        w.swap(u);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ODE reduction
// ---------------------------------------------------------------------------

ScalarFn scalar_driver(const ModelSpec& model) {
    validate(model);
    if (!model.state_independent) throw ConfigError(fmt::format("model '{}' is not state independent", model.name));
    require_order(model.driver_order, 2, "driver (ODE reduction)");
    const int d = model.dim_x;
    const int r = model.dim_w;
    const auto call = [model, d, r](double v, int order) {
        Jet j(1, model.driver_vars());
        const std::vector<double> x(static_cast<std::size_t>(d), 0.0);
        const std::vector<double> z(static_cast<std::size_t>(r), 0.0);
        model.driver(model.horizon, x, v, z, order, j);
        return j;
    };
    ScalarFn f;
    f.value = [call](double v) { return call(v, 0).value[0]; };
    f.first = [call, d](double v) { return call(v, 1).d1(0, d); };
    f.second = [call, d](double v) { return call(v, 2).d2(0, d, d); };
    return f;
}

OdeReduction ode_reduction(const ScalarFn& fv, double psi, double horizon, double epsilon, int orders, int steps) {
    if (!fv.value) throw ConfigError("ode_reduction needs f(v)");
    if (orders < 0 || orders > 3) throw ConfigError(fmt::format("ode_reduction supports orders 0..3, got {}", orders));
    if (orders >= 2 && !fv.first) throw ConfigError("ode_reduction order >= 2 needs f'(v)");
    if (orders >= 3 && !fv.second) throw ConfigError("ode_reduction order 3 needs f''(v)");
    if (!(horizon >= 0.0)) throw ConfigError("horizon must be non-negative");
    if (steps < 1) throw ConfigError("steps must be positive");

    const double h = horizon / steps;
    OdeReduction out;

    // Exact branch: dv/du = eps f(v), classic RK4.
    double v = psi;
    for (int k = 0; k < steps; ++k) {
        const double k1 = epsilon * fv.value(v);
        const double k2 = epsilon * fv.value(v + 0.5 * h * k1);
        const double k3 = epsilon * fv.value(v + 0.5 * h * k2);
        const double k4 = epsilon * fv.value(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(v) || std::abs(v) > 1e100) {
            throw OracleError(fmt::format("finite-time explosion of dv/du = eps f(v) before u={} (at u~{})", horizon,
                                          (k + 1) * h));
        }
    }
    out.exact = v;

    // Taylor hierarchy around V0 = psi:
    //   V1' = f(V0), V2' = f'(V0) V1, V3' = f'(V0) V2 + 1/2 f''(V0) V1^2.
    const double f0 = fv.value(psi);
    const double f1 = orders >= 2 ? fv.first(psi) : 0.0;
    const double f2 = orders >= 3 ? fv.second(psi) : 0.0;
    using State = std::array<double, 4>;
    const auto rhs = [&](const State& s) {
        return State{0.0, f0, f1 * s[1], f1 * s[2] + 0.5 * f2 * s[1] * s[1]};
    };
    State s{psi, 0.0, 0.0, 0.0};
    for (int k = 0; k < steps; ++k) {
        const State k1 = rhs(s);
        State tmp;
        for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
        const State k2 = rhs(tmp);
        for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
        const State k3 = rhs(tmp);
        for (int i = 0; i < 4; ++i) tmp[i] = s[i] + h * k3[i];
        const State k4 = rhs(tmp);
        for (int i = 0; i < 4; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out.coefficients.assign(s.begin(), s.begin() + orders + 1);
    return out;
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

namespace {

void golub_welsch(const Eigen::VectorXd& off, double mass, std::vector<double>& nodes, std::vector<double>& weights) {
    const Eigen::Index n = off.size() + 1;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        J(k, k + 1) = off(k);
        J(k + 1, k) = off(k);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes.resize(static_cast<std::size_t>(n));
    weights.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
        const double v0 = es.eigenvectors()(0, k);
        weights[static_cast<std::size_t>(k)] = mass * v0 * v0;
    }
}

}  // namespace

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw ConfigError("quadrature needs at least one node");
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    golub_welsch(off, 2.0, nodes, weights);
}

void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw ConfigError("quadrature needs at least one node");
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(static_cast<double>(k));
    golub_welsch(off, 1.0, nodes, weights);
}

double quadrature_v1(const ModelSpec& model, const ZerothOrderFunctions& zeroth, double t, double x_t,
                     const QuadratureSettings& settings) {
    validate(model);
    if (model.dim_x != 1 || model.dim_w != 1) throw ConfigError("quadrature_v1 requires d = r = 1");
    if (model.coupled()) throw ConfigError("quadrature_v1 expects a feedback-free model");
    const double T = model.horizon;
    if (!(t < T)) throw ConfigError("quadrature_v1 requires t < T");
    if (!model.exact_sample && !settings.allow_mc_fallback) {
        throw OracleError(fmt::format("model '{}' has no exact transition and the Monte Carlo fallback is disabled",
                                      model.name));
    }

    std::vector<double> gl_x, gl_w, gh_x, gh_w;
    gauss_legendre(settings.n_time, gl_x, gl_w);
    gauss_hermite(settings.n_hermite, gh_x, gh_w);

    DriverEvaluator eval(model, zeroth);
    RngStream rng(settings.seed, 0xabcdefULL);
    PathSimulator sim(model);
    const std::vector<double> x0{x_t};

    double total = 0.0;
    for (std::size_t q = 0; q < gl_x.size(); ++q) {
        const double u = t + 0.5 * (T - t) * (gl_x[q] + 1.0);
        double inner = 0.0;
        if (model.exact_sample) {
            for (std::size_t j = 0; j < gh_x.size(); ++j) {
                const double x = model.exact_sample(t, x_t, u, gh_x[j]);
                inner += gh_w[j] * eval.evaluate(u, std::span<const double>(&x, 1), 0).value;
            }
        } else {
            for (std::size_t p = 0; p < settings.mc_paths; ++p) {
                sim.reset(t, x0, T, (T - t) / 200.0);
                sim.advance_to(u, rng);
                inner += eval.evaluate(u, sim.state(), 0).value;
            }
            inner /= static_cast<double>(settings.mc_paths);
        }
        total += 0.5 * (T - t) * gl_w[q] * inner;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Bump-and-revalue
// ---------------------------------------------------------------------------

BumpReport check_gradient_vs_bump(const VSamplerBuilder& v_at, const OrderEstimate& z, std::span<const double> x_t,
                                  double h, std::span<const double> sigma_t, const McConfig& config) {
    const int d = static_cast<int>(x_t.size());
    if (d < 1 || sigma_t.size() % static_cast<std::size_t>(d) != 0) throw ConfigError("sigma_t must be d x r");
    const int r = static_cast<int>(sigma_t.size()) / d;
    if (static_cast<int>(z.value.size()) != r) throw ConfigError("Z estimate width does not match sigma_t");
    if (!(h > 0.0)) throw ConfigError("bump size must be positive");

    std::vector<SamplerFactory> plus, minus;
    for (int i = 0; i < d; ++i) {
        std::vector<double> xp(x_t.begin(), x_t.end()), xm(x_t.begin(), x_t.end());
        xp[static_cast<std::size_t>(i)] += h;
        xm[static_cast<std::size_t>(i)] -= h;
        plus.push_back(v_at(xp));
        minus.push_back(v_at(xm));
    }
    const std::vector<double> sig(sigma_t.begin(), sigma_t.end());

    SamplerFactory paired = [plus, minus, sig, d, r, h]() -> CascadeSampler {
        std::vector<CascadeSampler> sp, sm;
        for (int i = 0; i < d; ++i) {
            sp.push_back(plus[static_cast<std::size_t>(i)]());
            sm.push_back(minus[static_cast<std::size_t>(i)]());
        }
        return [sp, sm, sig, d, r, h](RngStream& rng, std::span<double> out) {
            double buf = 0.0;
            bool any = false;
            RngStream after = rng;
            for (int i = 0; i < d; ++i) {
                RngStream a = rng;
                buf = 0.0;
                any = sp[static_cast<std::size_t>(i)](a, std::span<double>(&buf, 1)) || any;
                const double vp = buf;
                RngStream b = rng;
                buf = 0.0;
                any = sm[static_cast<std::size_t>(i)](b, std::span<double>(&buf, 1)) || any;
                const double dv = (vp - buf) / (2.0 * h);
                for (int a2 = 0; a2 < r; ++a2) out[static_cast<std::size_t>(a2)] += dv * sig[static_cast<std::size_t>(i) * r + a2];
                after = b;
            }
            rng = after;
            return any;
        };
    };

    const SampleStats stats = run_cascades(paired, r, config);
    BumpReport rep;
    rep.bump_value = stats.mean;
    rep.bump_se = stats.std_error();
    rep.z_value = z.value;
    rep.z_se = z.std_error;
    rep.pass = true;
    for (int a = 0; a < r; ++a) {
        const std::size_t k = static_cast<std::size_t>(a);
        rep.abs_diff.push_back(std::abs(rep.z_value[k] - rep.bump_value[k]));
        rep.combined_se.push_back(std::hypot(rep.z_se[k], rep.bump_se[k]));
        rep.pass = rep.pass && within_tolerance(rep.z_value[k], rep.bump_value[k], rep.combined_se[k]);
    }
    return rep;
}

}  // namespace pertfbsde
