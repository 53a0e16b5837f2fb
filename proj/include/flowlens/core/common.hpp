#pragma once

#include <stdexcept>
#include <string>

namespace flowlens {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size disagreement between tensors/fields.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid architecture / sampler / variant configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
    using Error::Error;
};

// Arguments that violate an operation's preconditions.
struct InvalidInput : Error {
    using Error::Error;
};

// Raised when a training step produces a non-finite loss.
struct TrainingAbort : Error {
    using Error::Error;
};

#define FL_CHECK(cond, Exc, msg)          \
    do {                                  \
        if (!(cond)) throw Exc(msg);      \
    } while (0)

} // namespace flowlens
