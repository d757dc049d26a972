/**
 * @file errors.hpp
 * @brief Exception types raised by the library.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pertfbsde {

/// Invalid or incomplete configuration: missing callbacks, out-of-range parameters.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A simulated state became non-finite.
class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, std::size_t node)
        : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
    std::size_t node() const noexcept { return node_; }

private:
    std::size_t node_;
};

/// A flow was spawned or read at a time the simulation cursor has already passed.
class OrderingError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A deterministic reference solver failed (non-convergence, blow-up).
class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pertfbsde
