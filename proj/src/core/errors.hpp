#pragma once

#include <stdexcept>

namespace atoms {

// Shared error taxonomy. The CLI maps these onto process exit codes:
// ConfigError/ContractError -> 2, NumericError and other runtime -> 3,
// IoError/FormatError -> 4.

// Operand shapes are incompatible.
struct DimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An operation produced non-finite values, or training diverged.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A documented precondition was violated.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file contents (tensor files, IDX data, adapter bundles).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A file or directory could not be read or written.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid experiment configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace atoms
