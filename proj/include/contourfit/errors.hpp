#ifndef CONTOURFIT_ERRORS_HPP
#define CONTOURFIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace contourfit {

/// Raster/vector dimensions are invalid or inconsistent.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// An argument violates a documented precondition.
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file does not conform to its on-disk format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A shape kernel failed the positive semi-definiteness requirement.
struct KernelError : std::runtime_error {
    explicit KernelError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input data is missing or malformed (CLI-level).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Deterministic generation could not satisfy its constraints.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace contourfit

#endif
