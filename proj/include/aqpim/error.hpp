// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace aqpim {

// All library failures are reported through this type. `kind` is a stable,
// machine-readable identifier (e.g. "truncated", "capacity-exceeded"); the
// CLI echoes it verbatim in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Parse failure inside a binary file; carries the byte offset where the
// problem was detected.
class FormatError : public Error {
 public:
  FormatError(std::string kind, std::uint64_t offset, const std::string& message)
      : Error(std::move(kind), message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

inline void require(bool cond, const char* kind, const std::string& message) {
  if (!cond) throw Error(kind, message);
}

}  // namespace aqpim
