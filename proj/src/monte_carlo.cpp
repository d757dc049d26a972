#include "pertfbsde/monte_carlo.hpp"

#include "pertfbsde/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <exception>
#include <thread>

namespace pertfbsde {

SampleStats::SampleStats(int dims)
    : mean(static_cast<std::size_t>(dims), 0.0), m2(static_cast<std::size_t>(dims), 0.0) {}

void SampleStats::add(std::span<const double> x, bool contributing) {
    ++n;
    if (contributing) ++n_contributing;
    bool nonzero = false;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < mean.size(); ++k) {
        const double delta = x[k] - mean[k];
        mean[k] += delta * inv;
        m2[k] += delta * (x[k] - mean[k]);
        nonzero = nonzero || x[k] != 0.0;
    }
    if (nonzero) ++n_nonzero;
}

void SampleStats::merge(const SampleStats& other) {
    if (other.n == 0) return;
    if (n == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n);
    const double nb = static_cast<double>(other.n);
    const double nt = na + nb;
    for (std::size_t k = 0; k < mean.size(); ++k) {
        const double delta = other.mean[k] - mean[k];
        mean[k] += delta * nb / nt;
        m2[k] += other.m2[k] + delta * delta * na * nb / nt;
    }
    n += other.n;
    n_contributing += other.n_contributing;
    n_nonzero += other.n_nonzero;
}

std::vector<double> SampleStats::std_error() const {
    std::vector<double> se(mean.size(), 0.0);
    if (n < 2) return se;
    const double nn = static_cast<double>(n);
    for (std::size_t k = 0; k < mean.size(); ++k) se[k] = std::sqrt(m2[k] / (nn - 1.0) / nn);
    return se;
}

SampleStats run_cascades(const SamplerFactory& factory, int dims, const McConfig& config) {
    if (config.workers < 1) throw ConfigError(fmt::format("workers must be at least 1, got {}", config.workers));
    if (config.n_particles < 1) throw ConfigError("n_particles must be at least 1");
    if (dims < 1) throw ConfigError("sample dimension must be at least 1");

    const std::size_t parts = static_cast<std::size_t>(config.workers);
    std::vector<SampleStats> stats(parts, SampleStats(dims));
    std::vector<std::exception_ptr> errors(parts);

    auto work = [&](std::size_t p) {
        try {
            const std::size_t base = config.n_particles / parts;
            const std::size_t count = base + (p < config.n_particles % parts ? 1 : 0);
            RngStream rng(config.seed, partition_stream(config.stream, p));
            CascadeSampler sampler = factory();
            std::vector<double> out(static_cast<std::size_t>(dims));
            for (std::size_t k = 0; k < count; ++k) {
                std::fill(out.begin(), out.end(), 0.0);
                const bool contributing = sampler(rng, out);
                stats[p].add(out, contributing);
            }
        } catch (...) {
            errors[p] = std::current_exception();
        }
    };

    if (parts == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        threads.reserve(parts);
        for (std::size_t p = 0; p < parts; ++p) threads.emplace_back(work, p);
        for (auto& th : threads) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    SampleStats total(dims);
    for (const auto& s : stats) total.merge(s);
    return total;
}

std::string to_string(Component c) { return c == Component::V ? "V" : "Z"; }

OrderEstimate make_estimate(int order, Component component, const SampleStats& stats) {
    OrderEstimate e;
    e.order = order;
    e.component = component;
    e.value = stats.mean;
    e.std_error = stats.std_error();
    e.n_particles = stats.n;
    e.n_contributing = stats.n_contributing;
    e.n_nonzero = stats.n_nonzero;
    return e;
}

}  // namespace pertfbsde
