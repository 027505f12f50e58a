#pragma once

#include <stdexcept>
#include <string>

namespace deper {

// Internal failure (maps to exit code 1 / DEPER_ERROR at the boundary).
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad input from the caller: config, paths, flags (exit code 2 / DEPER_USAGE).
struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(what) {}
};

}  // namespace deper
