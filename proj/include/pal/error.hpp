#pragma once

#include <stdexcept>
#include <string>

namespace pal {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch between operands; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration value (rates, sizes, enum strings, study files).
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Malformed or out-of-contract input data (tokens out of range, too-short
// waveforms or feature sequences).
struct InputError : Error {
    using Error::Error;
};

// Malformed or incompatible checkpoint contents.
struct CheckpointError : Error {
    using Error::Error;
};

// CTC target cannot be aligned within the given number of frames.
struct InfeasibleTargetError : Error {
    using Error::Error;
};

// Brute-force oracle asked to enumerate more paths than it is scoped for.
struct OracleScopeError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    TrainingError(const std::string& msg, int64_t step_index)
        : Error(msg + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
    int64_t step;
};

}  // namespace pal
