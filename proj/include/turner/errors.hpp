#pragma once

#include <stdexcept>
#include <string>

namespace turner {

/// Malformed input files, bad labels, unparseable JSON. CLI exit code 2.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Model/config/corpus disagreement (scheme mismatch, dimension mismatch). CLI exit code 3.
class MismatchError : public std::runtime_error {
public:
  explicit MismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace turner
