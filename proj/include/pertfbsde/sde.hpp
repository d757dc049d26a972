/**
 * @file sde.hpp
 * @brief Euler-Maruyama simulation of the forward state and its stochastic flows.
 *
 * The simulated system is the free forward process
 *
 *   dX = r(t,X) dt + sigma(t,X) . dW
 *
 * together with any number of first-order flows Y_{s,u} = dX_u / dX_s
 * (identity at their anchor s) and second-order flows
 * Gamma_{t,s,u} = d/dX_t (Y_{s,u}) (zero at s). A second-order flow with
 * equal anchors is the two-index flow d2 X_u / dX_s dX_s.
 *
 * All flows along a path are driven by the same Brownian increments as X.
 * Interaction times are inserted into the uniform grid as exact nodes.
 */
#pragma once

#include "pertfbsde/jet.hpp"
#include "pertfbsde/model.hpp"
#include "pertfbsde/rng.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace pertfbsde {

struct TimeGrid {
    std::vector<double> nodes;
    double base_step = 0.0;
};

/// Tolerance below which two grid times are considered equal.
double time_tolerance(double horizon);

/// Number of uniform steps of size <= base_step covering (T - t).
int uniform_steps(double t, double T, double base_step);

/// Uniform partition of [t, T] with step <= base_step, every tau inserted as an exact node.
TimeGrid build_grid(double t, double T, double base_step, std::span<const double> taus = {});

using FlowId = int;

/**
 * Incremental path simulator ("path in progress").
 *
 * The cursor walks the uniform grid of the current reset and stops exactly
 * at every requested target and pending spawn time. Reusable across
 * cascades via reset(); buffers keep their capacity.
 */
class PathSimulator {
public:
    explicit PathSimulator(const ModelSpec& model);

    /// Start a new path at (t0, x0). The uniform grid spans [t0, horizon] with step <= base_step.
    void reset(double t0, std::span<const double> x0, double horizon, double base_step);

    double time() const { return time_; }
    std::size_t node_index() const { return node_; }
    std::span<const double> state() const { return x_; }
    const ModelSpec& model() const { return *model_; }
    int dim_x() const { return d_; }
    int dim_w() const { return r_; }

    /// Register Y_{s,.} (identity at s). Throws OrderingError if s is already passed.
    FlowId spawn_first(double s);

    /// Register Gamma_{outer anchor, s, .} (zero at s). `inner` must be anchored at s.
    FlowId spawn_second(double s, FlowId outer, FlowId inner);

    /// Advance the cursor to time s (s <= horizon).
    void advance_to(double s, RngStream& rng);

    std::span<const double> flow(FlowId id) const;
    std::span<const double> second_flow(FlowId id) const;
    double flow_anchor(FlowId id) const;
    bool flow_active(FlowId id) const;
    bool second_flow_active(FlowId id) const;

    /// Brownian increments of the last step (r values).
    std::span<const double> last_increment() const { return dw_; }

    /// Called after reset and after every step.
    void set_node_observer(std::function<void(const PathSimulator&)> observer) {
        observer_ = std::move(observer);
    }

private:
    struct FirstFlow {
        double anchor = 0.0;
        bool active = false;
        std::vector<double> values;
        std::vector<double> next;
    };
    struct SecondFlow {
        double anchor = 0.0;
        FlowId outer = -1;
        FlowId inner = -1;
        bool active = false;
        std::vector<double> values;
        std::vector<double> next;
    };

    void activate_pending();
    double next_stop(double target) const;
    void step(double dt, RngStream& rng);

    const ModelSpec* model_;
    int d_;
    int r_;
    double t0_ = 0.0;
    double horizon_ = 0.0;
    double h_ = 0.0;
    double tol_ = 0.0;
    int steps_ = 0;
    int next_k_ = 1;
    double time_ = 0.0;
    std::size_t node_ = 0;
    std::vector<double> x_;
    std::vector<double> dw_;
    std::vector<FirstFlow> firsts_;
    std::vector<SecondFlow> seconds_;
    int n_first_ = 0;
    int n_second_ = 0;
    int active_first_ = 0;
    int active_second_ = 0;
    Jet drift_;
    Jet vol_;
    std::vector<double> m_;   // d x d linearised step
    std::vector<double> s_;   // d x d x d second-derivative step
    std::function<void(const PathSimulator&)> observer_;
};

/// A fully recorded trajectory with its flows, one entry per grid node.
struct AugmentedPath {
    int dim_x = 1;
    int dim_w = 1;
    std::vector<double> times;
    std::vector<double> x;       ///< nodes x d
    std::vector<double> noise;   ///< (nodes - 1) x r
    /// anchor -> nodes x d x d; NaN before the anchor.
    std::map<double, std::vector<double>> flows;
    /// (outer anchor, inner anchor) -> nodes x d^3; NaN before the inner anchor.
    std::map<std::pair<double, double>, std::vector<double>> second_flows;

    std::span<const double> state_at(std::size_t node) const;
    std::span<const double> flow_at(double anchor, std::size_t node) const;
    std::span<const double> second_flow_at(double outer, double inner, std::size_t node) const;
};

/**
 * Simulate one path on `grid`, spawning a first-order flow at every
 * anchor in `flow_anchors` and a second-order flow for every
 * (outer, inner) pair. All anchors must be grid nodes; first-order flows
 * needed by a second-order pair are spawned automatically.
 */
AugmentedPath simulate_path(const ModelSpec& model, std::span<const double> x_t, const TimeGrid& grid,
                            RngStream& rng, std::span<const double> flow_anchors = {},
                            std::span<const std::pair<double, double>> second_flow_anchors = {});

/// Malliavin derivative D_t X_u = Y_{t,u} gamma(X_t): (d x d) times (d x r).
std::vector<double> malliavin_x(std::span<const double> flow, std::span<const double> gamma, int d, int r);

/// CSV dump: path_id,node_time,x_1..x_d,anchor,flow_1..flow_{d*d}; one row per node and live anchor.
void write_path_csv(std::ostream& os, const AugmentedPath& path, std::size_t path_id, bool header = true);

}  // namespace pertfbsde
