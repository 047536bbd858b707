#pragma once

#include <stdexcept>
#include <string>

namespace ftwt {

// Bad shapes, bad config values, misuse of an API contract. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated input files, out-of-range labels. CLI exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ftwt
