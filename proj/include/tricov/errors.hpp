#pragma once

#include <stdexcept>
#include <string>

namespace tricov {

// Malformed or inconsistent user input (files, configs, arguments).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failure at a known byte offset of a text file.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : InputError(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Filesystem or stream failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or a failed numerical check.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tricov
