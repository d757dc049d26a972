/**
 * @file coupled.hpp
 * @brief Expansion of the fully coupled problem around the feedback-free forward process.
 *
 * With feedback mu, eta in the forward coefficients, each order n >= 1 solves
 * (d_t + L) v_n + G_n = 0, v_n(T) = 0, where L is the generator of
 * dX = r dt + sigma dW. The sources are
 *
 *   G1 = f + d_i v0 mu^i + d_ij v0 (sigma^i . eta^j)
 *   G2 = T1 + ... + T6 with, writing D = v1 d_v + z1^a d_{z^a},
 *     T1 = D f
 *     T2 = d_i v1 mu^i
 *     T3 = d_i v0 D mu^i
 *     T4 = d_ij v1 (sigma^i . eta^j)
 *     T5 = 1/2 d_ij v0 (eta^i . eta^j)
 *     T6 = d_ij v0 sigma^i . D eta^j
 *   z1 = d_i v1 sigma^i + d_i v0 eta^i
 *
 * mu, eta and their partials are evaluated at (v0, z0). Derivatives of v1
 * are never formed: they are transported through the flows of X.
 */
#pragma once

#include "pertfbsde/cascade.hpp"
#include "pertfbsde/model.hpp"
#include "pertfbsde/monte_carlo.hpp"

#include <array>
#include <span>
#include <vector>

namespace pertfbsde {

enum class G2Term { T1 = 0, T2, T3, T4, T5, T6 };

/**
 * Coefficients of the second-order source at one point. G2 is linear in
 * (v1, z1, d v1, d2 v1):
 *   G2 = cv v1 + cz_a z1^a + mu^i d_i v1 + se_ij d_ij v1 + explicit_part
 * where z1 = d_i v1 sigma^i + eta_corr and explicit_part holds T5.
 */
struct G2Coefficients {
    double cv = 0.0;
    std::vector<double> cz;         ///< r
    std::vector<double> mu;         ///< d
    std::vector<double> se;         ///< d*d : (sigma^i . eta^j) at i*d+j
    std::vector<double> eta_corr;   ///< r   : d_i v0 eta^i_a
    double explicit_part = 0.0;     ///< T5
};

/// Callable sources of the coupled expansion. Holds references to model and order-0
/// functions plus scratch; copy per thread.
class CoupledSources {
public:
    CoupledSources(const ModelSpec& model, const ZerothOrderFunctions& zeroth);

    const ModelSpec& model() const { return *model_; }
    const ZerothOrderFunctions& zeroth() const { return *zeroth_; }

    double g1(double t, std::span<const double> x);

    /// Central-difference gradient (d) and Hessian (d*d) of g1 in x.
    void g1_derivatives(double t, std::span<const double> x, std::vector<double>& grad, std::vector<double>& hess);

    /// Relative step of the g1 differences: h_i = step * max(1, |x_i|).
    double fd_step = 1e-3;

    /// d_i v0 eta^i_a at (t, x); the deterministic part of z1.
    std::vector<double> eta_correction(double t, std::span<const double> x);

    /// Coefficients of the enabled G2 terms at (t, x).
    G2Coefficients g2_coefficients(double t, std::span<const double> x);

    std::array<bool, 6> g2_enabled{true, true, true, true, true, true};
    void enable_only(G2Term term);

private:
    void evaluate(double t, std::span<const double> x, int order);

    const ModelSpec* model_;
    const ZerothOrderFunctions* zeroth_;
    Jet v0_, z0_, vol_, f_, mu_, eta_;
    std::vector<double> xs_;
};

/// Checks prerequisites (v0 second partials) and returns the sources.
CoupledSources build_sources(const ModelSpec& model, const ZerothOrderFunctions& zeroth);

/// Samplers copy `sources` once per worker, including its G2 toggles.
SamplerFactory coupled_v1_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);
SamplerFactory coupled_z1_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);
SamplerFactory coupled_v2_sampler(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);

/// V1 = E[1_{tau<T} G1hat(tau, X_tau)].
OrderEstimate estimate_v1_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);

/// Z1 = E[1_{tau<T} (Y_{t,tau} sigma_t)^i_a d_i G1hat] + d_i v0 eta^i_a (t, x_t).
/// The correction is added to the mean and carries no standard error.
OrderEstimate estimate_z1_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);

/// V2 from the enabled G2 terms of `sources`.
OrderEstimate estimate_v2_coupled(const CoupledSources& sources, std::span<const double> x_t,
                                  const CascadeConfig& config);

}  // namespace pertfbsde
