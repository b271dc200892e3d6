#pragma once

#include <stdexcept>
#include <string>

namespace rscn {

// Bad flags, malformed configs, missing inputs. CLI exit code 2.
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Checksum or hash mismatches, truncated or corrupt files. CLI exit code 3.
struct integrity_error : std::runtime_error {
    explicit integrity_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rscn
