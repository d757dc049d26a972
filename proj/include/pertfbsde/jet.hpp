/**
 * @file jet.hpp
 * @brief Second-order jets: values with first and second partial derivatives.
 *
 * A Jet holds `outputs` scalar functions of `vars` variables. Callbacks fill
 * a caller-owned jet in place; the caller zeroes it first, so a callback only
 * writes the entries that are non-zero.
 *
 * Layout (row-major):
 *   value[o]
 *   grad[o * vars + p]              = d value[o] / dw_p
 *   hess[(o * vars + p) * vars + q] = d2 value[o] / dw_p dw_q
 */
#pragma once

#include <algorithm>
#include <span>
#include <vector>

namespace pertfbsde {

struct Jet {
    int outputs = 0;
    int vars = 0;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> hess;

    Jet() = default;
    Jet(int m, int n) { resize(m, n); }

    void resize(int m, int n) {
        outputs = m;
        vars = n;
        value.assign(static_cast<std::size_t>(m), 0.0);
        grad.assign(static_cast<std::size_t>(m) * n, 0.0);
        hess.assign(static_cast<std::size_t>(m) * n * n, 0.0);
    }

    /// Zero entries up to the requested derivative order.
    void clear(int order) {
        std::fill(value.begin(), value.end(), 0.0);
        if (order >= 1) std::fill(grad.begin(), grad.end(), 0.0);
        if (order >= 2) std::fill(hess.begin(), hess.end(), 0.0);
    }

    double& d1(int o, int p) { return grad[static_cast<std::size_t>(o) * vars + p]; }
    double d1(int o, int p) const { return grad[static_cast<std::size_t>(o) * vars + p]; }
    double& d2(int o, int p, int q) {
        return hess[(static_cast<std::size_t>(o) * vars + p) * vars + q];
    }
    double d2(int o, int p, int q) const {
        return hess[(static_cast<std::size_t>(o) * vars + p) * vars + q];
    }

    /// Set a symmetric second partial.
    void set_d2(int o, int p, int q, double h) {
        d2(o, p, q) = h;
        d2(o, q, p) = h;
    }
};

}  // namespace pertfbsde
