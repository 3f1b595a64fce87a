#pragma once

#include <stdexcept>
#include <string>

namespace e2r {

// CLI exit code 2
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

// CLI exit code 3: unreadable/corrupt/mismatched files and datasets
struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace e2r
