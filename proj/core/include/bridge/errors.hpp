#pragma once

#include <stdexcept>
#include <string>

namespace bridge {

// Shape or dimensionality mismatch between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid input data: bad files, empty masks, out-of-range values, bad ids.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: non-finite loss, degenerate reductions.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bridge
