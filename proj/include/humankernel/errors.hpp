#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hk {

// Cholesky factorization failed even after the maximum jitter was applied.
class CholeskyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every restart of a hyperparameter fit ended with a non-finite objective.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A line-delimited store contained a record that could not be decoded.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hk
