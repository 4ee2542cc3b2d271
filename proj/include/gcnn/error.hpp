#pragma once

#include <stdexcept>
#include <string>

namespace gcnn {

// Every error carries a short machine-readable kind; the CLI prints
// "error: <kind>: <message>" on a single line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct ConfigError : Error {
  ConfigError(std::string kind, const std::string& m) : Error(std::move(kind), m) {}
};

struct ValueError : Error {
  explicit ValueError(const std::string& m) : Error("value", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("missing-file", m) {}
};

}  // namespace gcnn
