// Shared scratch for the particle estimators. Internal to the library.
#pragma once

#include "pertfbsde/cascade.hpp"
#include "pertfbsde/errors.hpp"
#include "pertfbsde/jet.hpp"
#include "pertfbsde/sde.hpp"

#include <fmt/format.h>

#include <span>
#include <vector>

namespace pertfbsde::detail {

/// Resolved run parameters for one estimator call.
struct RunSetup {
    std::vector<double> x_t;
    double t = 0.0;
    double T = 0.0;
    double lambda = 0.0;
    double step = 0.0;
    int d = 1;
    int r = 1;
};

inline RunSetup resolve(const ModelSpec& model, std::span<const double> x_t, const CascadeConfig& config) {
    validate(model);
    RunSetup s;
    s.d = model.dim_x;
    s.r = model.dim_w;
    s.t = config.t;
    s.T = model.horizon;
    if (static_cast<int>(x_t.size()) != s.d) {
        throw ConfigError(fmt::format("x_t has {} components, model expects {}", x_t.size(), s.d));
    }
    if (!(s.t < s.T)) throw ConfigError(fmt::format("estimator requires t < T, got t={} T={}", s.t, s.T));
    if (config.n_particles < 1) throw ConfigError("n_particles must be at least 1");
    s.lambda = config.resolved_lambda(s.T);
    s.step = config.resolved_step(s.T);
    s.x_t.assign(x_t.begin(), x_t.end());
    return s;
}

/// Evaluate sigma(s, x) into `vol` (d*r outputs) up to `order`.
inline void eval_vol(const ModelSpec& model, double s, std::span<const double> x, int order, Jet& vol) {
    if (order > 0) require_order(model.vol_free_order, order, "vol_free");
    vol.clear(order);
    model.vol_free(s, x, order, vol);
}

/// out (d x r) = Y (d x d) * g (d x r).
inline void mat_mul(std::span<const double> Y, std::span<const double> g, int d, int r, std::span<double> out) {
    for (int i = 0; i < d; ++i) {
        for (int a = 0; a < r; ++a) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += Y[static_cast<std::size_t>(i) * d + j] * g[static_cast<std::size_t>(j) * r + a];
            out[static_cast<std::size_t>(i) * r + a] = s;
        }
    }
}

/// sum_i M^i_a v_i for a d x r matrix M.
inline double contract(std::span<const double> M, std::span<const double> v, int d, int r, int a) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += M[static_cast<std::size_t>(i) * r + a] * v[static_cast<std::size_t>(i)];
    return s;
}

inline bool any_nonzero(std::span<const double> v) {
    for (double x : v) {
        if (x != 0.0) return true;
    }
    return false;
}

}  // namespace pertfbsde::detail
