#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skd {

// Base of every error the library throws. The subclass names the failure
// class; callers that only care about "something went wrong" catch Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)), detail_(message) {}
  explicit ConfigError(const std::string& message) : Error(message), detail_(message) {}

  // Offending configuration key, empty when the error is not tied to one.
  const std::string& key() const noexcept { return key_; }
  // Message without the key prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string key_;
  std::string detail_;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t byte_offset, const std::string& message)
      : Error("byte " + std::to_string(byte_offset) + ": " + message), offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Warning channel. Conditions that degrade a result without invalidating it
// (skipped eigenvalue adjoints, under-determined operator fits, partition
// overshoot) are reported here instead of thrown.
using WarningHandler = std::function<void(std::string_view)>;

// Installs a handler for the calling thread and returns the previous one.
// An empty handler restores the default, which writes to stderr.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(std::string_view message);

// Collects warnings raised on this thread while alive.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const noexcept { return messages_; }
  bool contains(std::string_view needle) const;

 private:
  std::vector<std::string> messages_;
  WarningHandler previous_;
};

}  // namespace skd
