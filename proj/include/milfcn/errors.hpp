#pragma once

#include <stdexcept>
#include <string>

namespace milfcn {

// I/O failures: missing, truncated or malformed files. Everything else that
// rejects bad arguments throws std::invalid_argument.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace milfcn
