#pragma once

#include <stdexcept>
#include <string>

namespace fedlab {

// Error taxonomy used across the library. Every failure mode named in a
// module contract maps onto exactly one of these.

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProbeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PlanError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a simulated iterate leaves the finite range; the message names
// the client, round and local step that produced it.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace fedlab
