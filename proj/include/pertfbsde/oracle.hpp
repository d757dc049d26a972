/**
 * @file oracle.hpp
 * @brief Deterministic reference solutions for checking the particle estimators.
 *
 * - solve_semilinear_pde: Crank-Nicolson with Picard iteration for the full
 *   (possibly coupled) 1-D problem
 *     v_t + (r + eps mu) v_x + 1/2 (sigma + eps eta)^2 v_xx + eps f(t,x,v,z) = 0,
 *     z = v_x (sigma + eps eta),  v(T,x) = Psi(x).
 * - ode_reduction: the x-free problem dv/du = eps f(v), v(0) = psi, and its
 *   eps-Taylor coefficients.
 * - quadrature_v1: Gauss-Legendre in time of E[f(u, X_u, v0, z0)].
 * - check_gradient_vs_bump: central differences of a V estimator under common
 *   random numbers against a Z estimate.
 */
#pragma once

#include "pertfbsde/model.hpp"
#include "pertfbsde/monte_carlo.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pertfbsde {

/// |a - b| <= 3 se + 1e-9 max(1, |b|). The absolute floor absorbs rounding when se = 0.
bool within_tolerance(double a, double b, double se);

enum class Boundary { LinearExtrapolation, DirichletFromPayoff };

Boundary parse_boundary(const std::string& name);
std::string to_string(Boundary b);

struct Grid1D {
    double x_min = 0.0;
    double x_max = 1.0;
    int n_space = 201;   ///< nodes, including both ends
    int n_time = 200;    ///< time steps
    Boundary boundary = Boundary::LinearExtrapolation;

    void validate() const;
    double dx() const { return (x_max - x_min) / (n_space - 1); }
    double node(int i) const { return x_min + i * dx(); }
};

/// v(t, x) on the grid, stored per time node (first row is the start time).
struct ValueSurface {
    std::vector<double> times;   ///< increasing, times.front() = t0, times.back() = T
    std::vector<double> xs;
    std::vector<double> v;       ///< times.size() x xs.size()
    std::vector<double> z;       ///< same shape: v_x (sigma + eps eta)

    double at(std::size_t time_index, std::size_t x_index) const { return v[time_index * xs.size() + x_index]; }
    /// Linear interpolation in x at time index k.
    double interpolate(std::size_t time_index, double x) const;
    /// Value at the start time.
    double value(double x) const { return interpolate(0, x); }
    void write_csv(std::ostream& os) const;
};

/// Solve backward from T to t0. Throws OracleError on Picard non-convergence.
ValueSurface solve_semilinear_pde(const ModelSpec& model, const Grid1D& grid, double epsilon, double t0 = 0.0);

/// A scalar function with its first two derivatives.
struct ScalarFn {
    std::function<double(double)> value;
    std::function<double(double)> first;
    std::function<double(double)> second;
};

/// f(v) of a state-independent model (driver at z = 0).
ScalarFn scalar_driver(const ModelSpec& model);

struct OdeReduction {
    double exact = 0.0;                 ///< v(u) at the given epsilon
    std::vector<double> coefficients;   ///< V0 .. Vk (eps-Taylor coefficients at eps = 1 scale)
};

/// orders k in 0..3. Throws OracleError when the solution explodes before u.
OdeReduction ode_reduction(const ScalarFn& fv, double psi, double horizon, double epsilon, int orders,
                           int steps = 20000);

/// Gauss-Legendre (on [-1,1]) and probabilists' Gauss-Hermite (weight N(0,1)) rules via Golub-Welsch.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights);

struct QuadratureSettings {
    int n_time = 32;
    int n_hermite = 64;
    bool allow_mc_fallback = true;
    std::size_t mc_paths = 200000;   ///< per time node, when no exact transition exists
    std::uint64_t seed = 11;
};

/// int_t^T E[f(u, X_u, v0(X_u), z0(X_u))] du for a 1-D decoupled model.
double quadrature_v1(const ModelSpec& model, const ZerothOrderFunctions& zeroth, double t, double x_t,
                     const QuadratureSettings& settings = {});

/// Builds a V sampler at a given starting state (same seed for every state).
using VSamplerBuilder = std::function<SamplerFactory(std::span<const double> x)>;

struct BumpReport {
    std::vector<double> bump_value;    ///< sum_i dV/dx_i sigma^i_a, r entries
    std::vector<double> bump_se;
    std::vector<double> z_value;
    std::vector<double> z_se;
    std::vector<double> abs_diff;
    std::vector<double> combined_se;
    bool pass = false;
};

/**
 * Central differences of V in every x_i with step h, paired per cascade
 * (all bumped evaluations replay the same random draws), times sigma_t
 * (d x r), compared with the Z estimate.
 */
BumpReport check_gradient_vs_bump(const VSamplerBuilder& v_at, const OrderEstimate& z, std::span<const double> x_t,
                                  double h, std::span<const double> sigma_t, const McConfig& config);

}  // namespace pertfbsde
