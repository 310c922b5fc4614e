#ifndef LTS_ERROR_HPP
#define LTS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace lts {

/// Shape or geometry disagreement between tensors.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value (bad geometry, negative lr, bad key, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file (dataset container, checkpoint, CSV).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A documented invariant was violated at runtime (e.g. u <= l).
struct InvariantError : std::runtime_error {
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lts

#endif  // LTS_ERROR_HPP
