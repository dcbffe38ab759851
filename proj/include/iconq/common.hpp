#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace iconq {

// Malformed or contradictory configuration (bad key, bad value, unknown key).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed input data (files, traces, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

using QueryId = std::int64_t;
using RecordKey = std::int64_t;  // identity of one execution instance within a trace

}  // namespace iconq
