/**
 * @file monte_carlo.hpp
 * @brief Partitioned Monte Carlo driver with deterministic reduction.
 *
 * The budget is split into `workers` contiguous partitions. Partition p
 * draws from RngStream(seed, partition_stream(stream, p)) and keeps its own
 * running statistics; partitions are merged in index order, so results
 * depend on (seed, stream, workers) only.
 */
#pragma once

#include "pertfbsde/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pertfbsde {

/// One cascade: writes a sample into `out` (zeroed by the caller) and
/// returns true when all of its required interaction times fell before T.
using CascadeSampler = std::function<bool(RngStream& rng, std::span<double> out)>;

/// Called once per worker; each sampler owns its scratch state.
using SamplerFactory = std::function<CascadeSampler()>;

struct McConfig {
    std::size_t n_particles = 10000;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;
    int workers = 1;
};

/// Running mean and variance per component (Welford), mergeable across partitions.
struct SampleStats {
    std::size_t n = 0;
    std::size_t n_contributing = 0;
    std::size_t n_nonzero = 0;
    std::vector<double> mean;
    std::vector<double> m2;

    explicit SampleStats(int dims = 1);
    void add(std::span<const double> x, bool contributing);
    void merge(const SampleStats& other);
    /// Sample standard deviation (n - 1 denominator) over sqrt(n).
    std::vector<double> std_error() const;
};

SampleStats run_cascades(const SamplerFactory& factory, int dims, const McConfig& config);

enum class Component { V, Z };

std::string to_string(Component c);

/// Monte Carlo estimate of one expansion term.
struct OrderEstimate {
    int order = 0;
    Component component = Component::V;
    std::vector<double> value;       ///< 1 entry for V, r entries for Z
    std::vector<double> std_error;
    std::size_t n_particles = 0;
    std::size_t n_contributing = 0;  ///< cascades whose required interaction times all fell before T
    std::size_t n_nonzero = 0;       ///< cascades with a non-zero sample
};

OrderEstimate make_estimate(int order, Component component, const SampleStats& stats);

}  // namespace pertfbsde
