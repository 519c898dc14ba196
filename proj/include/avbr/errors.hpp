#pragma once

#include <stdexcept>
#include <string>

namespace avbr {

// Error hierarchy shared across the library. Each subclass marks one failure
// family so callers (and the CLI exit-code mapping) can tell them apart.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text (names the line number where possible).
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates a domain invariant (names the clip).
struct ValidationError : Error {
    using Error::Error;
};

// Binary container errors, kept distinct per the cache contract.
struct FormatError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};
struct TruncationError : Error {
    using Error::Error;
};
struct ChecksumError : Error {
    using Error::Error;
};

// Training aborts (NaN loss, empty train set).
struct TrainingError : Error {
    using Error::Error;
};

// Client transport failure after retries.
struct TransportError : Error {
    using Error::Error;
};

// Run configuration problems (CLI maps these to exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace avbr
