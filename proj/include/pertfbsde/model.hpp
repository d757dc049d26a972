/**
 * @file model.hpp
 * @brief FBSDE problem declaration, order-0 functions and the builtin model catalog.
 *
 * Forward dynamics are split into a feedback-free part and a feedback part:
 *
 *   dX = (r(t,X) + mu(t,X,V,Z)) dt + (sigma(t,X) + eta(t,X,V,Z)) . dW
 *   dV = -f(t,X,V,Z) dt + Z . dW,      V_T = Psi(X_T)
 *
 * Decoupled problems leave mu and eta unset; the forward SDE is then
 * driven by r and sigma alone.
 *
 * Index conventions used throughout the library:
 *   sigma^i_a  -> vol[i * r + a]           (d x r)
 *   Y^i_j      -> flow[i * d + j]          (d x d)
 *   Gamma^i_jk -> second[(i * d + j) * d + k]
 * Coefficient callbacks of (x, v, z) take their variables in the order
 * (x_1..x_d, v, z_1..z_r).
 */
#pragma once

#include "pertfbsde/jet.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pertfbsde {

/// Function of (t, x) with partials in x. Fills `out`, which the caller zeroed.
using StateFn = std::function<void(double t, std::span<const double> x, int order, Jet& out)>;

/// Function of (t, x, v, z) with partials in (x, v, z).
using CoupledFn = std::function<void(double t, std::span<const double> x, double v,
                                     std::span<const double> z, int order, Jet& out)>;

/// Exact transition of a 1-D free process: X_u given X_t = x, driven by a standard normal xi.
using ExactSampleFn = std::function<double(double t, double x, double u, double xi)>;

using ParamMap = std::map<std::string, double>;

struct ModelSpec {
    std::string name;
    int dim_x = 1;
    int dim_w = 1;
    double horizon = 1.0;

    StateFn drift_free;           ///< r(t,x), d outputs
    StateFn vol_free;             ///< sigma(t,x), d*r outputs
    CoupledFn drift_feedback;     ///< mu(t,x,v,z), d outputs; empty when decoupled
    CoupledFn vol_feedback;       ///< eta(t,x,v,z), d*r outputs; empty when decoupled
    CoupledFn driver;             ///< f(t,x,v,z), 1 output
    StateFn terminal;             ///< Psi(x), 1 output; t is ignored

    // Highest partial-derivative order each callback supplies.
    int drift_free_order = 2;
    int vol_free_order = 2;
    int drift_feedback_order = 2;
    int vol_feedback_order = 2;
    int driver_order = 2;
    int terminal_order = 1;

    ExactSampleFn exact_sample;   ///< optional, d = r = 1 only

    /// True when f depends on v only and Psi is constant.
    bool state_independent = false;

    bool coupled() const { return static_cast<bool>(drift_feedback) || static_cast<bool>(vol_feedback); }
    int driver_vars() const { return dim_x + 1 + dim_w; }

    /// Copy with the feedback callbacks removed.
    ModelSpec without_feedback() const;
};

/// Throws ConfigError when dimensions, horizon or mandatory callbacks are invalid.
void validate(const ModelSpec& model);

/// Throws ConfigError naming `what` when `supplied < needed`.
void require_order(int supplied, int needed, const std::string& what);

/// v0(t,x) and z0(t,x) of the driver-free problem, as explicit functions of state.
struct ZerothOrderFunctions {
    StateFn value;          ///< v0, 1 output; grad = dx_v0, hess = dxx_v0
    StateFn martingale;     ///< z0, r outputs; grad = dx_z0, hess = dxx_z0
    int value_order = 2;
    int martingale_order = 2;
};

/// A model together with its order-0 functions.
struct CatalogEntry {
    ModelSpec model;
    ZerothOrderFunctions zeroth;
};

/**
 * Driver composed with the order-0 functions at one point.
 *
 * All gradients are total x-derivatives of x -> g(t, x, v0(t,x), z0(t,x)),
 * i.e. the operator  nabla_i = d_i + d_i v0 d_v + d_i z0^a d_{z^a}.
 */
struct DriverPoint {
    double value = 0.0;
    double dv = 0.0;
    std::vector<double> dz;        ///< r
    std::vector<double> grad;      ///< d   : nabla_i f
    std::vector<double> grad_dv;   ///< d   : nabla_i (d_v f)
    std::vector<double> grad_dz;   ///< d*r : nabla_i (d_{z^b} f) at i*r+b
    std::vector<double> hess;      ///< d*d : nabla_j nabla_i f
    double dvv = 0.0;
    std::vector<double> dvz;       ///< r
    std::vector<double> dzz;       ///< r*r
};

/// Evaluates DriverPoint with reusable scratch. Not thread-safe; one per worker.
class DriverEvaluator {
public:
    DriverEvaluator(const ModelSpec& model, const ZerothOrderFunctions& zeroth);

    /// order 0: value; 1: adds dv, dz, grad; 2: adds the remaining entries.
    const DriverPoint& evaluate(double t, std::span<const double> x, int order);

    /// v0 and z0 at the last evaluated point.
    double v0() const { return v0_.value[0]; }
    std::span<const double> z0() const { return z0_.value; }

private:
    const ModelSpec* model_;
    const ZerothOrderFunctions* zeroth_;
    Jet v0_, z0_, f_;
    DriverPoint point_;
};

/// The d-vector (nabla_i f)(t, x, v0(t,x), z0(t,x)).
std::vector<double> nabla_f(const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                            double t, std::span<const double> x);

/// Names accepted by builtin_model.
const std::vector<std::string>& catalog_names();

/// One-line description for each catalog model.
std::string catalog_description(const std::string& name);

/**
 * Build a catalog model. Recognised parameters (with defaults):
 *   constant_driver:   c=1, sigma=0.2, T=1          ABM, Psi=x, f=c
 *   linear_discount:   r_c=0.05, sigma=0.2, T=1     driftless GBM, Psi=x, f=-r_c v
 *   quadratic_v:       K=1, sigma=0.2, T=1          ABM, Psi=K, f=v^2
 *   cva_positive_part: beta=0.03, sigma=0.2, T=1    driftless GBM, Psi=x, f=beta max(v,0)
 *   coupled_drift:     m=0.1, sigma=0.2, r_c=0, T=1 ABM, Psi=x, mu=m, f=-r_c v
 *   coupled_vol:       e=0.1, sigma=0.2, r_c=0, T=1 ABM, Psi=x, eta=e, f=-r_c v
 */
CatalogEntry builtin_model(const std::string& name, const ParamMap& params = {});

/// Evaluation point for partial-derivative checks.
struct ProbePoint {
    double t = 0.0;
    std::vector<double> x;
    double v = 0.0;
    std::vector<double> z;
};

struct PartialCheck {
    std::string callback;   ///< e.g. "driver"
    int order = 1;          ///< 1: gradient vs FD of value, 2: hessian vs FD of gradient
    double max_abs_error = 0.0;
};

struct PartialsReport {
    std::vector<PartialCheck> checks;
    double max_error() const;
    double error_of(const std::string& callback, int order) const;
};

/// Compare every supplied analytic partial against central differences with step h.
PartialsReport verify_partials(const ModelSpec& model, std::span<const ProbePoint> points, double h);

/// Same check for v0 and z0 (entries "v0" and "z0").
PartialsReport verify_partials(const ZerothOrderFunctions& zeroth, const ModelSpec& model,
                               std::span<const ProbePoint> points, double h);

/// Settings for the regression fallback that fits v0 when no closed form exists.
struct ZerothFitSettings {
    int degree = 2;
    std::size_t n_samples = 20000;
    double t_min = 0.0;
    std::vector<double> x_min;
    std::vector<double> x_max;
    double base_step = 0.0;   ///< 0: horizon / 200
    std::uint64_t seed = 7;
};

/**
 * Fit v0 by global least squares on a total-degree polynomial basis in
 * (t, x) over simulated (start state, Psi(X_T)) pairs. z0 is the analytic
 * spatial gradient of the fit times sigma.
 */
ZerothOrderFunctions fit_zeroth_order(const ModelSpec& model, const ZerothFitSettings& settings);

/**
 * Append time as the last state component (drift 1, no diffusion), so that
 * coefficients read time from the state rather than from their t argument.
 */
CatalogEntry with_time_component(const CatalogEntry& entry);

}  // namespace pertfbsde
