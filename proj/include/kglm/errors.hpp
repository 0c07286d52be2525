#pragma once

#include <stdexcept>
#include <string>

namespace kglm {

// Base for all library errors. Subclasses exist so callers can react to the
// failure class without parsing messages.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file (wrong column count, bad tag, bad number). Message
// carries file name and line number.
struct ParseError : Error {
    using Error::Error;
};

// Referential breakage: dangling ids, checkpoint/manifest mismatch.
struct IntegrityError : Error {
    using Error::Error;
};

// Invalid configuration value or unknown key.
struct ConfigError : Error {
    using Error::Error;
};

// Lookup of an id/token that does not exist.
struct LookupError : Error {
    using Error::Error;
};

// Sampling from an empty source (empty triple set, empty stream).
struct EmptySourceError : Error {
    using Error::Error;
};

// Pattern-constrained sampling gave up after bounded restarts.
struct PatternExhaustedError : Error {
    using Error::Error;
};

// Triples handed to a composition do not satisfy the pattern's structural
// predicate.
struct PatternError : Error {
    using Error::Error;
};

// NaN/Inf encountered in numeric state.
struct NumericError : Error {
    using Error::Error;
};

// Tensor/sequence shape violation.
struct ShapeError : Error {
    using Error::Error;
};

// Learning-rate schedule misuse (step index out of range).
struct ScheduleError : Error {
    using Error::Error;
};

// Operation got an input it cannot produce output for (e.g. a sentence with
// no maskable tokens, a batch with no labels).
struct DegenerateInputError : Error {
    using Error::Error;
};

}  // namespace kglm
