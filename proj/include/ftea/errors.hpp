#pragma once

#include <stdexcept>
#include <string>

namespace ftea {

// Bad file contents or filesystem failures. CLI maps these to exit code 3.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal invariant. CLI maps these to exit code 4.
struct internal_error : std::logic_error {
    explicit internal_error(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace ftea
