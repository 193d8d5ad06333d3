#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pattlite {

using Index = std::int64_t;

// Error hierarchy. The CLI maps these onto its exit-code contract:
// ConfigError -> 2, DataError -> 3, DivergenceError -> 4.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/precondition violations on tensor operations.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad configuration: invalid option values, unknown config keys,
// impossible layer combinations.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset / file-format problems: unreadable files, manifest mismatches,
// bad magic bytes, out-of-range labels.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite loss or gradients during training.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace pattlite
