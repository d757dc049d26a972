#include "pertfbsde/sde.hpp"

#include "pertfbsde/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace pertfbsde {

double time_tolerance(double horizon) {
    return 1e-12 * std::max(1.0, std::abs(horizon));
}

int uniform_steps(double t, double T, double base_step) {
    if (!(base_step > 0.0)) throw ConfigError(fmt::format("base_step must be positive, got {}", base_step));
    if (!(T > t)) throw ConfigError(fmt::format("grid requires t < T, got t={} T={}", t, T));
    const double ratio = (T - t) / base_step;
    return std::max(1, static_cast<int>(std::ceil(ratio - 1e-9)));
}

TimeGrid build_grid(double t, double T, double base_step, std::span<const double> taus) {
    const int steps = uniform_steps(t, T, base_step);
    const double h = (T - t) / steps;
    const double tol = time_tolerance(T);

    std::vector<double> nodes;
    nodes.reserve(static_cast<std::size_t>(steps) + 1 + taus.size());
    for (int k = 0; k < steps; ++k) nodes.push_back(t + k * h);
    nodes.push_back(T);

    for (double tau : taus) {
        if (!(tau > t && tau < T)) {
            throw ConfigError(fmt::format("interaction time {} outside ({}, {})", tau, t, T));
        }
        nodes.push_back(tau);
    }
    std::sort(nodes.begin(), nodes.end());

    // Merge near-duplicates, preferring the inserted interaction time.
    std::vector<double> merged;
    merged.reserve(nodes.size());
    for (double s : nodes) {
        if (!merged.empty() && s - merged.back() <= tol) {
            const bool is_tau = std::find(taus.begin(), taus.end(), s) != taus.end();
            if (is_tau && merged.back() != t) merged.back() = s;
            continue;
        }
        merged.push_back(s);
    }
    merged.back() = T;
    return TimeGrid{std::move(merged), base_step};
}

// ---------------------------------------------------------------------------
// PathSimulator
// ---------------------------------------------------------------------------

PathSimulator::PathSimulator(const ModelSpec& model)
    : model_(&model), d_(model.dim_x), r_(model.dim_w) {
    validate(model);
    x_.resize(static_cast<std::size_t>(d_));
    dw_.resize(static_cast<std::size_t>(r_));
    drift_.resize(d_, d_);
    vol_.resize(d_ * r_, d_);
    m_.resize(static_cast<std::size_t>(d_) * d_);
    s_.resize(static_cast<std::size_t>(d_) * d_ * d_);
}

void PathSimulator::reset(double t0, std::span<const double> x0, double horizon, double base_step) {
    if (static_cast<int>(x0.size()) != d_) {
        throw ConfigError(fmt::format("initial state has {} components, model expects {}", x0.size(), d_));
    }
    for (double xi : x0) {
        if (!std::isfinite(xi)) throw ConfigError("initial state is not finite");
    }
    t0_ = t0;
    horizon_ = horizon;
    steps_ = uniform_steps(t0, horizon, base_step);
    h_ = (horizon - t0) / steps_;
    tol_ = time_tolerance(horizon);
    next_k_ = 1;
    time_ = t0;
    node_ = 0;
    std::copy(x0.begin(), x0.end(), x_.begin());
    std::fill(dw_.begin(), dw_.end(), 0.0);
    n_first_ = 0;
    n_second_ = 0;
    active_first_ = 0;
    active_second_ = 0;
    if (observer_) observer_(*this);
}

FlowId PathSimulator::spawn_first(double s) {
    if (s < time_ - tol_) {
        throw OrderingError(fmt::format("cannot spawn flow at {}: simulation already at {}", s, time_));
    }
    if (s > horizon_ + tol_) throw OrderingError(fmt::format("flow anchor {} beyond horizon {}", s, horizon_));
    require_order(model_->drift_free_order, 1, "drift_free first partials");
    require_order(model_->vol_free_order, 1, "vol_free first partials");

    if (n_first_ == static_cast<int>(firsts_.size())) firsts_.emplace_back();
    FirstFlow& f = firsts_[static_cast<std::size_t>(n_first_)];
    f.anchor = s;
    f.active = false;
    f.values.assign(static_cast<std::size_t>(d_) * d_, 0.0);
    f.next.resize(f.values.size());
    const FlowId id = n_first_++;
    activate_pending();
    return id;
}

FlowId PathSimulator::spawn_second(double s, FlowId outer, FlowId inner) {
    if (s < time_ - tol_) {
        throw OrderingError(fmt::format("cannot spawn second-order flow at {}: simulation already at {}", s, time_));
    }
    if (outer < 0 || outer >= n_first_ || inner < 0 || inner >= n_first_) {
        throw ConfigError("second-order flow refers to an unknown first-order flow");
    }
    const FirstFlow& in = firsts_[static_cast<std::size_t>(inner)];
    const FirstFlow& out = firsts_[static_cast<std::size_t>(outer)];
    if (std::abs(in.anchor - s) > tol_) {
        throw ConfigError(fmt::format("inner flow anchored at {}, second-order flow at {}", in.anchor, s));
    }
    if (out.anchor > s + tol_) {
        throw ConfigError(fmt::format("outer flow anchored at {} after second-order anchor {}", out.anchor, s));
    }
    require_order(model_->drift_free_order, 2, "drift_free second partials");
    require_order(model_->vol_free_order, 2, "vol_free second partials");

    if (n_second_ == static_cast<int>(seconds_.size())) seconds_.emplace_back();
    SecondFlow& g = seconds_[static_cast<std::size_t>(n_second_)];
    g.anchor = s;
    g.outer = outer;
    g.inner = inner;
    g.active = false;
    g.values.assign(static_cast<std::size_t>(d_) * d_ * d_, 0.0);
    g.next.resize(g.values.size());
    const FlowId id = n_second_++;
    activate_pending();
    return id;
}

void PathSimulator::activate_pending() {
    for (int k = 0; k < n_first_; ++k) {
        FirstFlow& f = firsts_[static_cast<std::size_t>(k)];
        if (!f.active && f.anchor <= time_ + tol_) {
            std::fill(f.values.begin(), f.values.end(), 0.0);
            for (int i = 0; i < d_; ++i) f.values[static_cast<std::size_t>(i) * d_ + i] = 1.0;
            f.active = true;
            ++active_first_;
        }
    }
    for (int k = 0; k < n_second_; ++k) {
        SecondFlow& g = seconds_[static_cast<std::size_t>(k)];
        if (!g.active && g.anchor <= time_ + tol_) {
            std::fill(g.values.begin(), g.values.end(), 0.0);
            g.active = true;
            ++active_second_;
        }
    }
}

double PathSimulator::next_stop(double target) const {
    double next = target;
    if (next_k_ <= steps_) {
        const double uniform = next_k_ == steps_ ? horizon_ : t0_ + next_k_ * h_;
        if (uniform < next - tol_) next = uniform;
    }
    for (int k = 0; k < n_first_; ++k) {
        const FirstFlow& f = firsts_[static_cast<std::size_t>(k)];
        if (!f.active && f.anchor > time_ + tol_ && f.anchor < next - tol_) next = f.anchor;
    }
    for (int k = 0; k < n_second_; ++k) {
        const SecondFlow& g = seconds_[static_cast<std::size_t>(k)];
        if (!g.active && g.anchor > time_ + tol_ && g.anchor < next - tol_) next = g.anchor;
    }
    return next;
}

void PathSimulator::advance_to(double s, RngStream& rng) {
    if (s > horizon_ + tol_) throw OrderingError(fmt::format("target {} beyond horizon {}", s, horizon_));
    if (s < time_ - tol_) throw OrderingError(fmt::format("target {} already passed (at {})", s, time_));
    while (time_ < s - tol_) {
        const double next = next_stop(s);
        step(next - time_, rng);
        time_ = next;
        ++node_;
        while (next_k_ <= steps_ && (next_k_ == steps_ ? horizon_ : t0_ + next_k_ * h_) <= time_ + tol_) {
            ++next_k_;
        }
        activate_pending();
        if (observer_) observer_(*this);
    }
}

void PathSimulator::step(double dt, RngStream& rng) {
    const int d = d_;
    const int r = r_;
    const int order = active_second_ > 0 ? 2 : (active_first_ > 0 ? 1 : 0);

    drift_.clear(order);
    model_->drift_free(time_, x_, order, drift_);
    vol_.clear(order);
    model_->vol_free(time_, x_, order, vol_);

    const double sq = std::sqrt(dt);
    for (int a = 0; a < r; ++a) dw_[static_cast<std::size_t>(a)] = sq * rng.normal();

    if (order >= 1) {
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < d; ++k) {
                double m = drift_.d1(i, k) * dt;
                for (int a = 0; a < r; ++a) m += vol_.d1(i * r + a, k) * dw_[static_cast<std::size_t>(a)];
                m_[static_cast<std::size_t>(i) * d + k] = m;
            }
        }
    }
    if (order >= 2) {
        for (int i = 0; i < d; ++i) {
            for (int l = 0; l < d; ++l) {
                for (int mm = 0; mm < d; ++mm) {
                    double sv = drift_.d2(i, l, mm) * dt;
                    for (int a = 0; a < r; ++a) sv += vol_.d2(i * r + a, l, mm) * dw_[static_cast<std::size_t>(a)];
                    s_[(static_cast<std::size_t>(i) * d + l) * d + mm] = sv;
                }
            }
        }
        // Second-order flows use the pre-step first-order flows.
        for (int g = 0; g < n_second_; ++g) {
            SecondFlow& sf = seconds_[static_cast<std::size_t>(g)];
            if (!sf.active) continue;
            const auto& A = firsts_[static_cast<std::size_t>(sf.outer)].values;
            const auto& B = firsts_[static_cast<std::size_t>(sf.inner)].values;
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) {
                    for (int k = 0; k < d; ++k) {
                        const std::size_t idx = (static_cast<std::size_t>(i) * d + j) * d + k;
                        double v = sf.values[idx];
                        for (int l = 0; l < d; ++l) {
                            v += m_[static_cast<std::size_t>(i) * d + l] *
                                 sf.values[(static_cast<std::size_t>(l) * d + j) * d + k];
                            for (int mm = 0; mm < d; ++mm) {
                                v += s_[(static_cast<std::size_t>(i) * d + l) * d + mm] *
                                     A[static_cast<std::size_t>(mm) * d + j] * B[static_cast<std::size_t>(l) * d + k];
                            }
                        }
                        sf.next[idx] = v;
                    }
                }
            }
            sf.values.swap(sf.next);
        }
    }
    if (order >= 1) {
        for (int f = 0; f < n_first_; ++f) {
            FirstFlow& ff = firsts_[static_cast<std::size_t>(f)];
            if (!ff.active) continue;
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) {
                    double v = ff.values[static_cast<std::size_t>(i) * d + j];
                    for (int k = 0; k < d; ++k) {
                        v += m_[static_cast<std::size_t>(i) * d + k] * ff.values[static_cast<std::size_t>(k) * d + j];
                    }
                    ff.next[static_cast<std::size_t>(i) * d + j] = v;
                }
            }
            ff.values.swap(ff.next);
        }
    }

    for (int i = 0; i < d; ++i) {
        double dx = drift_.value[static_cast<std::size_t>(i)] * dt;
        for (int a = 0; a < r; ++a) dx += vol_.value[static_cast<std::size_t>(i) * r + a] * dw_[static_cast<std::size_t>(a)];
        x_[static_cast<std::size_t>(i)] += dx;
        if (!std::isfinite(x_[static_cast<std::size_t>(i)])) {
            throw SimulationError(fmt::format("non-finite state component {} at t={}", i, time_ + dt), node_ + 1);
        }
    }
}

std::span<const double> PathSimulator::flow(FlowId id) const {
    if (!flow_active(id)) throw OrderingError(fmt::format("flow {} is not active at t={}", id, time_));
    return firsts_[static_cast<std::size_t>(id)].values;
}

std::span<const double> PathSimulator::second_flow(FlowId id) const {
    if (!second_flow_active(id)) throw OrderingError(fmt::format("second-order flow {} is not active at t={}", id, time_));
    return seconds_[static_cast<std::size_t>(id)].values;
}

double PathSimulator::flow_anchor(FlowId id) const {
    if (id < 0 || id >= n_first_) throw ConfigError("unknown flow id");
    return firsts_[static_cast<std::size_t>(id)].anchor;
}

bool PathSimulator::flow_active(FlowId id) const {
    return id >= 0 && id < n_first_ && firsts_[static_cast<std::size_t>(id)].active;
}

bool PathSimulator::second_flow_active(FlowId id) const {
    return id >= 0 && id < n_second_ && seconds_[static_cast<std::size_t>(id)].active;
}

// ---------------------------------------------------------------------------
// Recorded paths
// ---------------------------------------------------------------------------

std::span<const double> AugmentedPath::state_at(std::size_t node) const {
    return std::span<const double>(x).subspan(node * static_cast<std::size_t>(dim_x), static_cast<std::size_t>(dim_x));
}

std::span<const double> AugmentedPath::flow_at(double anchor, std::size_t node) const {
    const auto it = flows.find(anchor);
    if (it == flows.end()) throw ConfigError(fmt::format("no flow anchored at {}", anchor));
    const std::size_t dd = static_cast<std::size_t>(dim_x) * dim_x;
    return std::span<const double>(it->second).subspan(node * dd, dd);
}

std::span<const double> AugmentedPath::second_flow_at(double outer, double inner, std::size_t node) const {
    const auto it = second_flows.find({outer, inner});
    if (it == second_flows.end()) throw ConfigError(fmt::format("no second-order flow anchored at ({}, {})", outer, inner));
    const std::size_t ddd = static_cast<std::size_t>(dim_x) * dim_x * dim_x;
    return std::span<const double>(it->second).subspan(node * ddd, ddd);
}

AugmentedPath simulate_path(const ModelSpec& model, std::span<const double> x_t, const TimeGrid& grid,
                            RngStream& rng, std::span<const double> flow_anchors,
                            std::span<const std::pair<double, double>> second_flow_anchors) {
    if (grid.nodes.size() < 2) throw ConfigError("time grid needs at least two nodes");
    const double t = grid.nodes.front();
    const double T = grid.nodes.back();
    const double tol = time_tolerance(T);
    const auto on_grid = [&](double s) {
        const auto it = std::lower_bound(grid.nodes.begin(), grid.nodes.end(), s - tol);
        if (it == grid.nodes.end() || std::abs(*it - s) > tol) {
            throw ConfigError(fmt::format("anchor {} is not a grid node", s));
        }
        return *it;
    };

    std::vector<double> anchors;
    for (double s : flow_anchors) anchors.push_back(on_grid(s));
    for (const auto& [outer, inner] : second_flow_anchors) {
        anchors.push_back(on_grid(outer));
        anchors.push_back(on_grid(inner));
    }
    std::sort(anchors.begin(), anchors.end());
    anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());

    AugmentedPath path;
    path.dim_x = model.dim_x;
    path.dim_w = model.dim_w;
    path.times = grid.nodes;
    const std::size_t n = grid.nodes.size();
    const std::size_t d = static_cast<std::size_t>(model.dim_x);
    const double nan = std::numeric_limits<double>::quiet_NaN();

    PathSimulator sim(model);
    // A single uniform step: the cursor visits exactly the supplied nodes.
    sim.reset(t, x_t, T, T - t);

    std::map<double, FlowId> first_ids;
    for (double s : anchors) {
        first_ids[s] = sim.spawn_first(s);
        path.flows[s].assign(n * d * d, nan);
    }
    std::vector<std::pair<std::pair<double, double>, FlowId>> second_ids;
    for (const auto& [outer, inner] : second_flow_anchors) {
        const double o = on_grid(outer);
        const double i = on_grid(inner);
        second_ids.push_back({{o, i}, sim.spawn_second(i, first_ids.at(o), first_ids.at(i))});
        path.second_flows[{o, i}].assign(n * d * d * d, nan);
    }

    path.x.reserve(n * d);
    path.noise.reserve((n - 1) * static_cast<std::size_t>(model.dim_w));
    const auto record = [&](std::size_t node) {
        for (double xi : sim.state()) path.x.push_back(xi);
        for (const auto& [s, id] : first_ids) {
            if (!sim.flow_active(id)) continue;
            const auto y = sim.flow(id);
            std::copy(y.begin(), y.end(), path.flows[s].begin() + static_cast<std::ptrdiff_t>(node * d * d));
        }
        for (const auto& [key, id] : second_ids) {
            if (!sim.second_flow_active(id)) continue;
            const auto g = sim.second_flow(id);
            std::copy(g.begin(), g.end(), path.second_flows[key].begin() + static_cast<std::ptrdiff_t>(node * d * d * d));
        }
    };

    record(0);
    for (std::size_t k = 1; k < n; ++k) {
        sim.advance_to(grid.nodes[k], rng);
        for (double w : sim.last_increment()) path.noise.push_back(w);
        record(k);
    }
    return path;
}

std::vector<double> malliavin_x(std::span<const double> flow, std::span<const double> gamma, int d, int r) {
    if (d <= 0 || r <= 0 || flow.size() != static_cast<std::size_t>(d) * d ||
        gamma.size() != static_cast<std::size_t>(d) * r) {
        throw ConfigError(fmt::format("malliavin_x shape mismatch: flow {} (expected {}x{}), gamma {} (expected {}x{})",
                                      flow.size(), d, d, gamma.size(), d, r));
    }
    std::vector<double> out(static_cast<std::size_t>(d) * r, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int a = 0; a < r; ++a)
                out[static_cast<std::size_t>(i) * r + a] +=
                    flow[static_cast<std::size_t>(i) * d + j] * gamma[static_cast<std::size_t>(j) * r + a];
    return out;
}

void write_path_csv(std::ostream& os, const AugmentedPath& path, std::size_t path_id, bool header) {
    const int d = path.dim_x;
    if (header) {
        os << "path_id,node_time";
        for (int i = 1; i <= d; ++i) os << ",x_" << i;
        os << ",anchor";
        for (int i = 1; i <= d * d; ++i) os << ",flow_" << i;
        os << '\n';
    }
    for (std::size_t node = 0; node < path.times.size(); ++node) {
        std::string prefix = fmt::format("{},{:.17g}", path_id, path.times[node]);
        for (double xi : path.state_at(node)) prefix += fmt::format(",{:.17g}", xi);
        bool any = false;
        for (const auto& [anchor, values] : path.flows) {
            const auto y = path.flow_at(anchor, node);
            if (std::isnan(y[0])) continue;
            any = true;
            os << prefix << fmt::format(",{:.17g}", anchor);
            for (double v : y) os << fmt::format(",{:.17g}", v);
            os << '\n';
        }
        if (!any) {
            os << prefix << ',';
            for (int i = 0; i < d * d; ++i) os << ',';
            os << '\n';
        }
    }
}

}  // namespace pertfbsde
