#pragma once

#include <stdexcept>
#include <string>

namespace usdn {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// stable exit codes: ConfigError/ContractError -> 2, IoError/FormatError/
// DatasetError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format: " + msg) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error("contract: " + msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& msg) : Error("dataset: " + msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric: " + msg) {}
};

}  // namespace usdn
