#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ota {

/// Bad user input: missing files, malformed records, broken invariants.
/// The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FileNotFound : public InputError {
 public:
  explicit FileNotFound(const std::string& path) : InputError("file not found: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : InputError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ota
