/**
 * @file cascade.hpp
 * @brief Interacting-particle estimators for the decoupled expansion V(0..3), Z(0..2).
 *
 * Every estimator averages independent cascades. A cascade draws its
 * interaction times from a Poisson process of constant intensity lambda,
 * simulates the forward state and the flows it needs up to those times and
 * evaluates the driver with the weight e^{lambda (s - a)} / lambda.
 * Cascades whose required interaction chain leaves (t, T) contribute 0.
 *
 * Draw discipline: a cascade first takes all of its exponential
 * inter-arrival times, then one child stream per path it may simulate.
 * The number of draws per cascade is fixed, so runs at different x_t with
 * the same seed use common random numbers.
 */
#pragma once

#include "pertfbsde/model.hpp"
#include "pertfbsde/monte_carlo.hpp"
#include "pertfbsde/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pertfbsde {

struct InteractionSchedule {
    std::vector<double> taus;   ///< tau_1 < tau_2 < ... (k draws)
    double lambda = 0.0;
    double t = 0.0;
    double horizon = 0.0;

    /// tau_k < T (the tie tau = T counts as outside).
    bool inside(std::size_t k) const { return taus[k] < horizon; }
    std::size_t count_inside() const;
};

/// k sequential times tau_j = t + E_1 + ... + E_j with E_i ~ Exp(lambda).
InteractionSchedule sample_interactions(double lambda, double t, double T, RngStream& rng, int needed);

/// raw * e^{lambda (s - t)} / lambda.
double weight_fhat(double lambda, double t, double s, double raw);

/// Settings shared by all particle estimators.
struct CascadeConfig {
    double t = 0.0;
    double lambda = 0.0;        ///< 0: default 2 / (T - t)
    double base_step = 0.0;     ///< 0: default (T - t) / 200
    std::size_t n_particles = 10000;
    std::uint64_t seed = 1;
    int workers = 1;
    std::uint64_t replica = 0;  ///< offsets every stream id; distinct replicas are independent

    double resolved_lambda(double T) const;
    double resolved_step(double T) const;
};

/// Stream id used by an estimator; distinct per (component, order, coupled, replica).
std::uint64_t estimator_stream(Component component, int order, bool coupled, std::uint64_t replica);

/// Cascade sampler for V(order), order 0..3. One output.
SamplerFactory v_sampler(int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                         std::span<const double> x_t, const CascadeConfig& config);

/// Cascade sampler for Z(order), order 0..2. r outputs.
SamplerFactory z_sampler(int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                         std::span<const double> x_t, const CascadeConfig& config);

OrderEstimate estimate_v0(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_z0(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_v1(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_z1(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_v2(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_z2(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);
OrderEstimate estimate_v3(const ModelSpec& model, const ZerothOrderFunctions& zeroth, std::span<const double> x_t,
                          const CascadeConfig& config);

/// Dispatch on (component, order).
OrderEstimate estimate(Component component, int order, const ModelSpec& model, const ZerothOrderFunctions& zeroth,
                       std::span<const double> x_t, const CascadeConfig& config);

/// Closed-form v0(t, x_t) and z0(t, x_t) from the order-0 functions.
struct ZerothReference {
    double v0 = 0.0;
    std::vector<double> z0;
};
ZerothReference zeroth_order_reference(const ZerothOrderFunctions& zeroth, const ModelSpec& model, double t,
                                       std::span<const double> x_t);

/// Per-order estimates with epsilon-weighted totals.
struct ExpansionResult {
    std::vector<OrderEstimate> estimates;
    double epsilon = 1.0;
    std::vector<double> total_v;
    std::vector<double> total_v_se;
    std::vector<double> total_z;      ///< empty when no Z estimates
    std::vector<double> total_z_se;

    const OrderEstimate* find(Component component, int order) const;
};

/// total = sum eps^n estimate_n, variances summed. Requires V order 0.
ExpansionResult combine_orders(const std::vector<OrderEstimate>& estimates, double epsilon);

}  // namespace pertfbsde
