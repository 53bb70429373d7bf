#pragma once

#include <stdexcept>
#include <string>

namespace dag {

// Error taxonomy mirrored by the CLI exit-code contract:
// validation -> 1, I/O or file format -> 2, numerical failure -> 3.

struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Tensor/layer dimension mismatch; message names both shapes.
struct ShapeError : InputError {
    using InputError::InputError;
};

// An operation was invoked in a state that forbids it (e.g. predicting
// offsets while the offset module is disabled).
struct StateError : InputError {
    using InputError::InputError;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed bag/model file; message carries the byte offset of the defect.
struct FormatError : IoError {
    using IoError::IoError;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dag
