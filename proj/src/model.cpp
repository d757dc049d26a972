#include "pertfbsde/model.hpp"

#include "pertfbsde/errors.hpp"
#include "pertfbsde/rng.hpp"
#include "pertfbsde/sde.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <memory>

namespace pertfbsde {

ModelSpec ModelSpec::without_feedback() const {
    ModelSpec copy = *this;
    copy.drift_feedback = nullptr;
    copy.vol_feedback = nullptr;
    copy.name = name + "/free";
    return copy;
}

void require_order(int supplied, int needed, const std::string& what) {
    if (supplied < needed) {
        throw ConfigError(fmt::format("missing partial derivatives: {} needs order {}, callback supplies order {}",
                                      what, needed, supplied));
    }
}

void validate(const ModelSpec& model) {
    if (model.dim_x <= 0) throw ConfigError(fmt::format("dim_x must be positive, got {}", model.dim_x));
    if (model.dim_w <= 0) throw ConfigError(fmt::format("dim_w must be positive, got {}", model.dim_w));
    if (!(model.horizon > 0.0) || !std::isfinite(model.horizon)) {
        throw ConfigError(fmt::format("horizon must be positive, got {}", model.horizon));
    }
    if (!model.drift_free) throw ConfigError("model is missing callback drift_free");
    if (!model.vol_free) throw ConfigError("model is missing callback vol_free");
    if (!model.driver) throw ConfigError("model is missing callback driver");
    if (!model.terminal) throw ConfigError("model is missing callback terminal");
    if (model.exact_sample && (model.dim_x != 1 || model.dim_w != 1)) {
        throw ConfigError("exact_sample is only supported for d = r = 1");
    }
}

// ---------------------------------------------------------------------------
// Driver composition
// ---------------------------------------------------------------------------

DriverEvaluator::DriverEvaluator(const ModelSpec& model, const ZerothOrderFunctions& zeroth)
    : model_(&model), zeroth_(&zeroth) {
    validate(model);
    if (!zeroth.value || !zeroth.martingale) throw ConfigError("order-0 functions are missing v0 or z0");
    const int d = model.dim_x;
    const int r = model.dim_w;
    v0_.resize(1, d);
    z0_.resize(r, d);
    f_.resize(1, model.driver_vars());
    point_.dz.assign(static_cast<std::size_t>(r), 0.0);
    point_.grad.assign(static_cast<std::size_t>(d), 0.0);
    point_.grad_dv.assign(static_cast<std::size_t>(d), 0.0);
    point_.grad_dz.assign(static_cast<std::size_t>(d) * r, 0.0);
    point_.hess.assign(static_cast<std::size_t>(d) * d, 0.0);
    point_.dvz.assign(static_cast<std::size_t>(r), 0.0);
    point_.dzz.assign(static_cast<std::size_t>(r) * r, 0.0);
}

const DriverPoint& DriverEvaluator::evaluate(double t, std::span<const double> x, int order) {
    const ModelSpec& m = *model_;
    const int d = m.dim_x;
    const int r = m.dim_w;
    if (order >= 1) {
        require_order(m.driver_order, order, "driver");
        require_order(zeroth_->value_order, order, "v0");
        require_order(zeroth_->martingale_order, order, "z0");
    }
    v0_.clear(order);
    zeroth_->value(t, x, order, v0_);
    z0_.clear(order);
    zeroth_->martingale(t, x, order, z0_);
    f_.clear(order);
    m.driver(t, x, v0_.value[0], z0_.value, order, f_);

    DriverPoint& p = point_;
    p.value = f_.value[0];
    if (order < 1) return p;

    const int iv = d;
    const auto iz = [d](int a) { return d + 1 + a; };
    p.dv = f_.d1(0, iv);
    for (int a = 0; a < r; ++a) p.dz[static_cast<std::size_t>(a)] = f_.d1(0, iz(a));
    for (int k = 0; k < d; ++k) {
        double g = f_.d1(0, k) + p.dv * v0_.d1(0, k);
        for (int a = 0; a < r; ++a) g += p.dz[static_cast<std::size_t>(a)] * z0_.d1(a, k);
        p.grad[static_cast<std::size_t>(k)] = g;
    }
    if (order < 2) return p;

    // tot(q, k): total x_k derivative of the partial d_q f along (x, v0, z0).
    const auto tot = [&](int q, int k) {
        double s = f_.d2(0, q, k) + f_.d2(0, q, iv) * v0_.d1(0, k);
        for (int a = 0; a < r; ++a) s += f_.d2(0, q, iz(a)) * z0_.d1(a, k);
        return s;
    };
    for (int k = 0; k < d; ++k) {
        p.grad_dv[static_cast<std::size_t>(k)] = tot(iv, k);
        for (int b = 0; b < r; ++b) p.grad_dz[static_cast<std::size_t>(k) * r + b] = tot(iz(b), k);
    }
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < d; ++i) {
            double h = tot(i, j) + v0_.d1(0, i) * tot(iv, j) + p.dv * v0_.d2(0, i, j);
            for (int a = 0; a < r; ++a) {
                h += z0_.d1(a, i) * tot(iz(a), j) + p.dz[static_cast<std::size_t>(a)] * z0_.d2(a, i, j);
            }
            p.hess[static_cast<std::size_t>(j) * d + i] = h;
        }
    }
    p.dvv = f_.d2(0, iv, iv);
    for (int a = 0; a < r; ++a) {
        p.dvz[static_cast<std::size_t>(a)] = f_.d2(0, iv, iz(a));
        for (int b = 0; b < r; ++b) p.dzz[static_cast<std::size_t>(a) * r + b] = f_.d2(0, iz(a), iz(b));
    }
    return p;
}

std::vector<double> nabla_f(const ModelSpec& model, const ZerothOrderFunctions& zeroth, double t,
                            std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.dim_x) {
        throw ConfigError(fmt::format("state has {} components, model expects {}", x.size(), model.dim_x));
    }
    DriverEvaluator eval(model, zeroth);
    return eval.evaluate(t, x, 1).grad;
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

namespace {

struct CatalogInfo {
    const char* name;
    const char* description;
    std::vector<std::pair<std::string, double>> defaults;
};

const std::vector<CatalogInfo>& catalog_table() {
    static const std::vector<CatalogInfo> table = {
        {"constant_driver", "arithmetic Brownian X, Psi(x)=x, f=c", {{"c", 1.0}, {"sigma", 0.2}, {"T", 1.0}}},
        {"linear_discount", "driftless geometric Brownian X, Psi(x)=x, f=-r_c v",
         {{"r_c", 0.05}, {"sigma", 0.2}, {"T", 1.0}}},
        {"quadratic_v", "arithmetic Brownian X, Psi=K constant, f=v^2", {{"K", 1.0}, {"sigma", 0.2}, {"T", 1.0}}},
        {"cva_positive_part", "driftless geometric Brownian X, Psi(x)=x, f=beta max(v,0)",
         {{"beta", 0.03}, {"sigma", 0.2}, {"T", 1.0}}},
        {"coupled_drift", "arithmetic Brownian X with drift feedback mu=m, Psi(x)=x, f=-r_c v",
         {{"m", 0.1}, {"sigma", 0.2}, {"r_c", 0.0}, {"T", 1.0}}},
        {"coupled_vol", "arithmetic Brownian X with vol feedback eta=e, Psi(x)=x, f=-r_c v",
         {{"e", 0.1}, {"sigma", 0.2}, {"r_c", 0.0}, {"T", 1.0}}},
    };
    return table;
}

const CatalogInfo& catalog_info(const std::string& name) {
    for (const auto& info : catalog_table()) {
        if (name == info.name) return info;
    }
    std::string known;
    for (const auto& n : catalog_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError(fmt::format("unknown model '{}'; catalog: {}", name, known));
}

ParamMap resolve_params(const CatalogInfo& info, const ParamMap& params) {
    ParamMap out(info.defaults.begin(), info.defaults.end());
    for (const auto& [key, value] : params) {
        if (!out.count(key)) {
            std::string known;
            for (const auto& [k, v] : info.defaults) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError(fmt::format("model '{}' has no parameter '{}'; parameters: {}", info.name, key, known));
        }
        if (!std::isfinite(value)) throw ConfigError(fmt::format("parameter '{}' is not finite", key));
        out[key] = value;
    }
    if (!(out.at("T") > 0.0)) throw ConfigError(fmt::format("parameter 'T' must be positive, got {}", out.at("T")));
    if (!(out.at("sigma") > 0.0)) {
        throw ConfigError(fmt::format("parameter 'sigma' must be positive, got {}", out.at("sigma")));
    }
    return out;
}

StateFn zero_state_fn() {
    return [](double, std::span<const double>, int, Jet&) {};
}

StateFn constant_vol(double sigma) {
    return [sigma](double, std::span<const double>, int, Jet& out) { out.value[0] = sigma; };
}

StateFn proportional_vol(double sigma) {
    return [sigma](double, std::span<const double> x, int order, Jet& out) {
        out.value[0] = sigma * x[0];
        if (order >= 1) out.d1(0, 0) = sigma;
    };
}

StateFn identity_state() {
    return [](double, std::span<const double> x, int order, Jet& out) {
        out.value[0] = x[0];
        if (order >= 1) out.d1(0, 0) = 1.0;
    };
}

StateFn constant_state(double c) {
    return [c](double, std::span<const double>, int, Jet& out) { out.value[0] = c; };
}

/// f = c0 + c1 v on variables (x, v, z).
CoupledFn affine_in_v(double c0, double c1) {
    return [c0, c1](double, std::span<const double>, double v, std::span<const double>, int order, Jet& out) {
        out.value[0] = c0 + c1 * v;
        if (order >= 1) out.d1(0, 1) = c1;
    };
}

CoupledFn constant_coupled(double c) {
    return [c](double, std::span<const double>, double, std::span<const double>, int, Jet& out) {
        out.value[0] = c;
    };
}

ExactSampleFn abm_exact(double sigma) {
    return [sigma](double t, double x, double u, double xi) { return x + sigma * std::sqrt(u - t) * xi; };
}

ExactSampleFn gbm_exact(double sigma) {
    return [sigma](double t, double x, double u, double xi) {
        const double tau = u - t;
        return x * std::exp(-0.5 * sigma * sigma * tau + sigma * std::sqrt(tau) * xi);
    };
}

}  // namespace

const std::vector<std::string>& catalog_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& info : catalog_table()) out.emplace_back(info.name);
        return out;
    }();
    return names;
}

std::string catalog_description(const std::string& name) {
    const CatalogInfo& info = catalog_info(name);
    std::string text = info.description;
    text += " [";
    bool first = true;
    for (const auto& [k, v] : info.defaults) {
        text += fmt::format("{}{}={}", first ? "" : ", ", k, v);
        first = false;
    }
    return text + "]";
}

CatalogEntry builtin_model(const std::string& name, const ParamMap& params) {
    const CatalogInfo& info = catalog_info(name);
    const ParamMap p = resolve_params(info, params);
    const double sigma = p.at("sigma");

    CatalogEntry e;
    ModelSpec& m = e.model;
    m.name = name;
    m.dim_x = 1;
    m.dim_w = 1;
    m.horizon = p.at("T");
    m.drift_free = zero_state_fn();
    m.terminal = identity_state();
    m.terminal_order = 2;

    // Driftless dynamics with Psi(x)=x: v0 = x is the martingale, z0 = sigma(x).
    e.zeroth.value = identity_state();

    if (name == "linear_discount" || name == "cva_positive_part") {
        m.vol_free = proportional_vol(sigma);
        m.exact_sample = gbm_exact(sigma);
        e.zeroth.martingale = proportional_vol(sigma);
    } else {
        m.vol_free = constant_vol(sigma);
        m.exact_sample = abm_exact(sigma);
        e.zeroth.martingale = constant_vol(sigma);
    }

    if (name == "constant_driver") {
        m.driver = constant_coupled(p.at("c"));
    } else if (name == "linear_discount") {
        m.driver = affine_in_v(0.0, -p.at("r_c"));
    } else if (name == "quadratic_v") {
        const double K = p.at("K");
        m.terminal = constant_state(K);
        m.driver = [](double, std::span<const double>, double v, std::span<const double>, int order, Jet& out) {
            out.value[0] = v * v;
            if (order >= 1) out.d1(0, 1) = 2.0 * v;
            if (order >= 2) out.d2(0, 1, 1) = 2.0;
        };
        m.state_independent = true;
        e.zeroth.value = constant_state(K);
        e.zeroth.martingale = zero_state_fn();
    } else if (name == "cva_positive_part") {
        const double beta = p.at("beta");
        // Second partials vanish away from the kink at v = 0.
        m.driver = [beta](double, std::span<const double>, double v, std::span<const double>, int order, Jet& out) {
            out.value[0] = beta * std::max(v, 0.0);
            if (order >= 1) out.d1(0, 1) = v > 0.0 ? beta : 0.0;
        };
    } else if (name == "coupled_drift") {
        const double mm = p.at("m");
        m.driver = affine_in_v(0.0, -p.at("r_c"));
        m.drift_feedback = constant_coupled(mm);
    } else if (name == "coupled_vol") {
        const double ee = p.at("e");
        m.driver = affine_in_v(0.0, -p.at("r_c"));
        m.vol_feedback = constant_coupled(ee);
    }
    validate(m);
    return e;
}

// ---------------------------------------------------------------------------
// Partial-derivative verification
// ---------------------------------------------------------------------------

namespace {

/// Generic evaluator over a flat variable vector w.
using FlatFn = std::function<void(std::span<const double> w, int order, Jet& out)>;

/// Max |analytic - central difference| for order 1 (grad) or 2 (hess).
double fd_error(const FlatFn& fn, int outputs, int vars, std::span<const double> w0, double h, int order) {
    Jet base(outputs, vars), plus(outputs, vars), minus(outputs, vars);
    base.clear(order);
    fn(w0, order, base);
    std::vector<double> w(w0.begin(), w0.end());
    double err = 0.0;
    for (int q = 0; q < vars; ++q) {
        const double saved = w[static_cast<std::size_t>(q)];
        w[static_cast<std::size_t>(q)] = saved + h;
        plus.clear(order - 1);
        fn(w, order - 1, plus);
        w[static_cast<std::size_t>(q)] = saved - h;
        minus.clear(order - 1);
        fn(w, order - 1, minus);
        w[static_cast<std::size_t>(q)] = saved;
        for (int o = 0; o < outputs; ++o) {
            if (order == 1) {
                const double fd = (plus.value[o] - minus.value[o]) / (2.0 * h);
                err = std::max(err, std::abs(fd - base.d1(o, q)));
            } else {
                for (int p = 0; p < vars; ++p) {
                    const double fd = (plus.d1(o, p) - minus.d1(o, p)) / (2.0 * h);
                    err = std::max(err, std::abs(fd - base.d2(o, p, q)));
                }
            }
        }
    }
    return err;
}

void check_callback(PartialsReport& report, const std::string& name, const FlatFn& fn, int outputs, int vars,
                    int supplied_order, const std::vector<std::vector<double>>& points, double h) {
    for (int order = 1; order <= std::min(supplied_order, 2); ++order) {
        double err = 0.0;
        for (const auto& w : points) err = std::max(err, fd_error(fn, outputs, vars, w, h, order));
        report.checks.push_back({name, order, err});
    }
}

FlatFn flat_state(const StateFn& fn, double t) {
    return [fn, t](std::span<const double> w, int order, Jet& out) { fn(t, w, order, out); };
}

FlatFn flat_coupled(const CoupledFn& fn, double t, int d) {
    return [fn, t, d](std::span<const double> w, int order, Jet& out) {
        fn(t, w.subspan(0, static_cast<std::size_t>(d)), w[static_cast<std::size_t>(d)],
           w.subspan(static_cast<std::size_t>(d) + 1), order, out);
    };
}

void check_point_shape(const ModelSpec& model, const ProbePoint& pt) {
    if (static_cast<int>(pt.x.size()) != model.dim_x || static_cast<int>(pt.z.size()) != model.dim_w) {
        throw ConfigError("probe point does not match model dimensions");
    }
}

}  // namespace

double PartialsReport::max_error() const {
    double e = 0.0;
    for (const auto& c : checks) e = std::max(e, c.max_abs_error);
    return e;
}

double PartialsReport::error_of(const std::string& callback, int order) const {
    for (const auto& c : checks) {
        if (c.callback == callback && c.order == order) return c.max_abs_error;
    }
    throw ConfigError(fmt::format("no partial check for {} at order {}", callback, order));
}

PartialsReport verify_partials(const ModelSpec& model, std::span<const ProbePoint> points, double h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    validate(model);
    const int d = model.dim_x;
    const int r = model.dim_w;
    const int n = model.driver_vars();

    PartialsReport report;
    // Each point carries its own t; group checks per point and merge maxima.
    for (const ProbePoint& pt : points) {
        check_point_shape(model, pt);
        PartialsReport local;
        const std::vector<std::vector<double>> xs = {pt.x};
        std::vector<double> w(pt.x);
        w.push_back(pt.v);
        w.insert(w.end(), pt.z.begin(), pt.z.end());
        const std::vector<std::vector<double>> ws = {w};

        check_callback(local, "drift_free", flat_state(model.drift_free, pt.t), d, d, model.drift_free_order, xs, h);
        check_callback(local, "vol_free", flat_state(model.vol_free, pt.t), d * r, d, model.vol_free_order, xs, h);
        check_callback(local, "terminal", flat_state(model.terminal, pt.t), 1, d, model.terminal_order, xs, h);
        check_callback(local, "driver", flat_coupled(model.driver, pt.t, d), 1, n, model.driver_order, ws, h);
        if (model.drift_feedback) {
            check_callback(local, "drift_feedback", flat_coupled(model.drift_feedback, pt.t, d), d, n,
                           model.drift_feedback_order, ws, h);
        }
        if (model.vol_feedback) {
            check_callback(local, "vol_feedback", flat_coupled(model.vol_feedback, pt.t, d), d * r, n,
                           model.vol_feedback_order, ws, h);
        }
        if (report.checks.empty()) {
            report = local;
        } else {
            for (std::size_t k = 0; k < local.checks.size(); ++k) {
                report.checks[k].max_abs_error = std::max(report.checks[k].max_abs_error, local.checks[k].max_abs_error);
            }
        }
    }
    return report;
}

PartialsReport verify_partials(const ZerothOrderFunctions& zeroth, const ModelSpec& model,
                               std::span<const ProbePoint> points, double h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    const int d = model.dim_x;
    const int r = model.dim_w;
    PartialsReport report;
    for (const ProbePoint& pt : points) {
        check_point_shape(model, pt);
        PartialsReport local;
        const std::vector<std::vector<double>> xs = {pt.x};
        check_callback(local, "v0", flat_state(zeroth.value, pt.t), 1, d, zeroth.value_order, xs, h);
        check_callback(local, "z0", flat_state(zeroth.martingale, pt.t), r, d, zeroth.martingale_order, xs, h);
        if (report.checks.empty()) {
            report = local;
        } else {
            for (std::size_t k = 0; k < local.checks.size(); ++k) {
                report.checks[k].max_abs_error = std::max(report.checks[k].max_abs_error, local.checks[k].max_abs_error);
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Regression fallback for v0
// ---------------------------------------------------------------------------

namespace {

/// Total-degree monomial basis in scaled variables u = (w - centre) / scale.
struct PolyBasis {
    std::vector<std::vector<int>> exponents;   // per term, per variable
    std::vector<double> centre;
    std::vector<double> scale;

    static void enumerate(int vars, int degree, std::vector<int>& cur, int pos, int left,
                          std::vector<std::vector<int>>& out) {
        if (pos == vars) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= left; ++e) {
            cur[static_cast<std::size_t>(pos)] = e;
            enumerate(vars, degree, cur, pos + 1, left - e, out);
        }
        cur[static_cast<std::size_t>(pos)] = 0;
    }

    PolyBasis(int vars, int degree, std::vector<double> c, std::vector<double> s)
        : centre(std::move(c)), scale(std::move(s)) {
        std::vector<int> cur(static_cast<std::size_t>(vars), 0);
        enumerate(vars, degree, cur, 0, degree, exponents);
    }

    std::size_t size() const { return exponents.size(); }

    /// Derivative of one monomial; `orders[v]` differentiations in variable v.
    double term(std::size_t k, std::span<const double> w, std::span<const int> orders) const {
        double value = 1.0;
        for (std::size_t v = 0; v < w.size(); ++v) {
            const int e = exponents[k][v];
            const int o = orders[v];
            if (o > e) return 0.0;
            const double u = (w[v] - centre[v]) / scale[v];
            double coeff = 1.0;
            for (int q = 0; q < o; ++q) coeff *= static_cast<double>(e - q);
            value *= coeff * std::pow(u, e - o) / std::pow(scale[v], o);
        }
        return value;
    }
};

}  // namespace

ZerothOrderFunctions fit_zeroth_order(const ModelSpec& model, const ZerothFitSettings& settings) {
    validate(model);
    if (model.coupled()) throw ConfigError("fit_zeroth_order expects a feedback-free model");
    const int d = model.dim_x;
    const int r = model.dim_w;
    if (static_cast<int>(settings.x_min.size()) != d || static_cast<int>(settings.x_max.size()) != d) {
        throw ConfigError("fit box must have one bound per state component");
    }
    if (settings.degree < 1) throw ConfigError("fit degree must be at least 1");
    if (settings.n_samples < 10) throw ConfigError("fit needs at least 10 samples");
    const double T = model.horizon;
    if (!(settings.t_min < T)) throw ConfigError("fit t_min must be below the horizon");

    std::vector<double> centre{0.5 * (settings.t_min + T)};
    std::vector<double> scale{0.5 * (T - settings.t_min)};
    for (int i = 0; i < d; ++i) {
        const double lo = settings.x_min[static_cast<std::size_t>(i)];
        const double hi = settings.x_max[static_cast<std::size_t>(i)];
        if (!(hi > lo)) throw ConfigError("fit box must have x_max > x_min");
        centre.push_back(0.5 * (lo + hi));
        scale.push_back(0.5 * (hi - lo));
    }
    auto basis = std::make_shared<PolyBasis>(d + 1, settings.degree, centre, scale);
    const std::size_t nb = basis->size();

    const double base_step = settings.base_step > 0.0 ? settings.base_step : T / 200.0;
    RngStream rng(settings.seed, 0x5eedf17ULL);
    PathSimulator sim(model);
    Jet psi(1, d);
    std::vector<int> zero_orders(static_cast<std::size_t>(d) + 1, 0);

    Eigen::MatrixXd A(static_cast<Eigen::Index>(settings.n_samples), static_cast<Eigen::Index>(nb));
    Eigen::VectorXd b(static_cast<Eigen::Index>(settings.n_samples));
    std::vector<double> w(static_cast<std::size_t>(d) + 1);
    std::vector<double> x0(static_cast<std::size_t>(d));
    for (std::size_t s = 0; s < settings.n_samples; ++s) {
        // Sample start times away from T so that every draw carries some diffusion.
        const double t0 = settings.t_min + (T - settings.t_min) * rng.uniform();
        for (int i = 0; i < d; ++i) {
            x0[static_cast<std::size_t>(i)] = settings.x_min[static_cast<std::size_t>(i)] +
                                              (settings.x_max[static_cast<std::size_t>(i)] -
                                               settings.x_min[static_cast<std::size_t>(i)]) * rng.uniform();
        }
        double value;
        if (T - t0 <= time_tolerance(T)) {
            psi.clear(0);
            model.terminal(T, x0, 0, psi);
            value = psi.value[0];
        } else {
            sim.reset(t0, x0, T, base_step);
            sim.advance_to(T, rng);
            psi.clear(0);
            model.terminal(T, sim.state(), 0, psi);
            value = psi.value[0];
        }
        w[0] = t0;
        std::copy(x0.begin(), x0.end(), w.begin() + 1);
        for (std::size_t k = 0; k < nb; ++k) {
            A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = basis->term(k, w, zero_orders);
        }
        b(static_cast<Eigen::Index>(s)) = value;
    }
    const Eigen::VectorXd coef_e = A.colPivHouseholderQr().solve(b);
    auto coef = std::make_shared<std::vector<double>>(coef_e.data(), coef_e.data() + coef_e.size());

    // Derivative of the fitted v0 in x with the given multi-order (time order 0).
    auto eval = [basis, coef, d](double t, std::span<const double> x, std::vector<int> orders) {
        std::vector<double> ww(static_cast<std::size_t>(d) + 1);
        ww[0] = t;
        std::copy(x.begin(), x.end(), ww.begin() + 1);
        std::vector<int> o(static_cast<std::size_t>(d) + 1, 0);
        for (std::size_t i = 0; i < orders.size(); ++i) o[i + 1] = orders[i];
        double s = 0.0;
        for (std::size_t k = 0; k < basis->size(); ++k) s += (*coef)[k] * basis->term(k, ww, o);
        return s;
    };
    auto deriv = [eval, d](double t, std::span<const double> x, std::initializer_list<int> idx) {
        std::vector<int> orders(static_cast<std::size_t>(d), 0);
        for (int i : idx) ++orders[static_cast<std::size_t>(i)];
        return eval(t, x, orders);
    };

    ZerothOrderFunctions z;
    z.value = [deriv, d](double t, std::span<const double> x, int order, Jet& out) {
        out.value[0] = deriv(t, x, {});
        if (order >= 1) {
            for (int i = 0; i < d; ++i) out.d1(0, i) = deriv(t, x, {i});
        }
        if (order >= 2) {
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) out.d2(0, i, j) = deriv(t, x, {i, j});
        }
    };
    auto vol = model.vol_free;
    const int vol_order = model.vol_free_order;
    z.martingale = [deriv, vol, d, r, vol_order](double t, std::span<const double> x, int order, Jet& out) {
        if (order > 0) require_order(vol_order, order, "vol_free (fitted z0)");
        Jet s(d * r, d);
        vol(t, x, order, s);
        for (int a = 0; a < r; ++a) {
            double v = 0.0;
            for (int i = 0; i < d; ++i) v += deriv(t, x, {i}) * s.value[static_cast<std::size_t>(i) * r + a];
            out.value[static_cast<std::size_t>(a)] = v;
        }
        if (order >= 1) {
            for (int a = 0; a < r; ++a) {
                for (int j = 0; j < d; ++j) {
                    double v = 0.0;
                    for (int i = 0; i < d; ++i) {
                        v += deriv(t, x, {i, j}) * s.value[static_cast<std::size_t>(i) * r + a] +
                             deriv(t, x, {i}) * s.d1(i * r + a, j);
                    }
                    out.d1(a, j) = v;
                }
            }
        }
        if (order >= 2) {
            for (int a = 0; a < r; ++a) {
                for (int j = 0; j < d; ++j) {
                    for (int k = 0; k < d; ++k) {
                        double v = 0.0;
                        for (int i = 0; i < d; ++i) {
                            const int o = i * r + a;
                            v += deriv(t, x, {i, j, k}) * s.value[static_cast<std::size_t>(o)] +
                                 deriv(t, x, {i, j}) * s.d1(o, k) + deriv(t, x, {i, k}) * s.d1(o, j) +
                                 deriv(t, x, {i}) * s.d2(o, j, k);
                        }
                        out.d2(a, j, k) = v;
                    }
                }
            }
        }
    };
    z.value_order = 2;
    z.martingale_order = std::min(2, vol_order);
    return z;
}

// ---------------------------------------------------------------------------
// Time as a state component
// ---------------------------------------------------------------------------

namespace {

/// Wrap a callback whose inner variables are (x_1..x_d, rest...) so that time
/// becomes the extra variable at index d. Partials in time use central differences.
struct TimeLift {
    int d;
    int inner_vars;
    int outputs;
    double h;

    int map(int p) const { return p < d ? p : p + 1; }

    template <class Call>
    void apply(double t, int order, Jet& out, Call&& call) const {
        Jet base(outputs, inner_vars);
        call(t, order, base);
        for (int o = 0; o < outputs; ++o) {
            out.value[static_cast<std::size_t>(o)] = base.value[static_cast<std::size_t>(o)];
            if (order >= 1)
                for (int p = 0; p < inner_vars; ++p) out.d1(o, map(p)) = base.d1(o, p);
            if (order >= 2)
                for (int p = 0; p < inner_vars; ++p)
                    for (int q = 0; q < inner_vars; ++q) out.d2(o, map(p), map(q)) = base.d2(o, p, q);
        }
        if (order < 1) return;
        Jet plus(outputs, inner_vars), minus(outputs, inner_vars);
        const int sub = order - 1;
        call(t + h, sub, plus);
        call(t - h, sub, minus);
        for (int o = 0; o < outputs; ++o) {
            out.d1(o, d) = (plus.value[static_cast<std::size_t>(o)] - minus.value[static_cast<std::size_t>(o)]) / (2 * h);
            if (order >= 2) {
                out.d2(o, d, d) = (plus.value[static_cast<std::size_t>(o)] - 2 * base.value[static_cast<std::size_t>(o)] +
                                   minus.value[static_cast<std::size_t>(o)]) / (h * h);
                for (int p = 0; p < inner_vars; ++p) {
                    const double c = (plus.d1(o, p) - minus.d1(o, p)) / (2 * h);
                    out.set_d2(o, d, map(p), c);
                }
            }
        }
    }
};

StateFn lift_state(const StateFn& inner, int d, int outputs, double h) {
    TimeLift lift{d, d, outputs, h};
    return [inner, lift, d](double, std::span<const double> x, int order, Jet& out) {
        const double t = x[static_cast<std::size_t>(d)];
        const auto xs = x.subspan(0, static_cast<std::size_t>(d));
        lift.apply(t, order, out, [&](double tt, int o, Jet& j) { inner(tt, xs, o, j); });
    };
}

CoupledFn lift_coupled(const CoupledFn& inner, int d, int r, int outputs, double h) {
    TimeLift lift{d, d + 1 + r, outputs, h};
    return [inner, lift, d](double, std::span<const double> x, double v, std::span<const double> z, int order,
                            Jet& out) {
        const double t = x[static_cast<std::size_t>(d)];
        const auto xs = x.subspan(0, static_cast<std::size_t>(d));
        lift.apply(t, order, out, [&](double tt, int o, Jet& j) { inner(tt, xs, v, z, o, j); });
    };
}

}  // namespace

CatalogEntry with_time_component(const CatalogEntry& entry) {
    const ModelSpec& m = entry.model;
    validate(m);
    const int d = m.dim_x;
    const int r = m.dim_w;
    const double h = 1e-4 * std::max(1.0, std::abs(m.horizon));

    CatalogEntry out;
    ModelSpec& n = out.model;
    n.name = m.name + "+time";
    n.dim_x = d + 1;
    n.dim_w = r;
    n.horizon = m.horizon;
    n.drift_free_order = m.drift_free_order;
    n.vol_free_order = m.vol_free_order;
    n.drift_feedback_order = m.drift_feedback_order;
    n.vol_feedback_order = m.vol_feedback_order;
    n.driver_order = m.driver_order;
    n.terminal_order = m.terminal_order;
    n.state_independent = m.state_independent;

    // Row-major d x r outputs keep their flat index; the time row (index d) is zero.
    n.drift_free = [inner = lift_state(m.drift_free, d, d, h), d](double t, std::span<const double> x,
                                                                             int order, Jet& o) {
        inner(t, x, order, o);
        o.value[static_cast<std::size_t>(d)] = 1.0;
    };
    n.vol_free = lift_state(m.vol_free, d, d * r, h);
    n.terminal = [term = m.terminal, d](double t, std::span<const double> x, int order, Jet& o) {
        Jet base(1, d);
        term(t, x.subspan(0, static_cast<std::size_t>(d)), order, base);
        o.value[0] = base.value[0];
        if (order >= 1)
            for (int i = 0; i < d; ++i) o.d1(0, i) = base.d1(0, i);
        if (order >= 2)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) o.d2(0, i, j) = base.d2(0, i, j);
    };
    n.driver = lift_coupled(m.driver, d, r, 1, h);
    if (m.drift_feedback) n.drift_feedback = lift_coupled(m.drift_feedback, d, r, d, h);
    if (m.vol_feedback) n.vol_feedback = lift_coupled(m.vol_feedback, d, r, d * r, h);

    out.zeroth.value = lift_state(entry.zeroth.value, d, 1, h);
    out.zeroth.martingale = lift_state(entry.zeroth.martingale, d, r, h);
    out.zeroth.value_order = entry.zeroth.value_order;
    out.zeroth.martingale_order = entry.zeroth.martingale_order;
    validate(n);
    return out;
}

}  // namespace pertfbsde
