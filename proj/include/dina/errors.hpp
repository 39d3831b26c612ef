#pragma once

#include <stdexcept>
#include <string>

namespace dina {

// Configuration problems: bad parameter values, malformed config files,
// invalid table rows. CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data problems: unreadable/malformed datasets, schema violations,
// checkpoint dimension mismatches. CLI maps these to exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed mid-run. CLI maps these to exit code 4.
struct StageError : std::runtime_error {
  explicit StageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dina
