/**
 * @file rng.hpp
 * @brief Seeded random streams for reproducible, partitioned Monte Carlo.
 */
#pragma once

#include <cstdint>
#include <random>

namespace pertfbsde {

/**
 * A reproducible random stream identified by (seed, stream_id).
 *
 * Identical ids give identical sequences. Distinct stream ids are mixed
 * through std::seed_seq, which decorrelates the Mersenne Twister states.
 * The object is copyable; a copy replays the same future draws, which is
 * how common random numbers are obtained for bump-and-revalue.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Exponential draw with the given rate.
    double exponential(double rate) { return exponential_(engine_) / rate; }

    /// Child stream seeded from the next engine output. Consumes exactly one draw.
    RngStream split() {
        RngStream child(*this);
        child.engine_.seed(engine_());
        child.normal_.reset();
        return child;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::exponential_distribution<double> exponential_{1.0};
};

/// Stream id for partition `partition` of logical stream `stream`.
constexpr std::uint64_t partition_stream(std::uint64_t stream, std::uint64_t partition) {
    return (stream << 20) | (partition & 0xFFFFFu);
}

}  // namespace pertfbsde
