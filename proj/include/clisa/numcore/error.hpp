#pragma once

#include <stdexcept>
#include <string>

namespace clisa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or channel disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition that is not a shape problem (bad label, negative radius, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. Carries the byte offset at which parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  /// The description without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

/// Raised by the training loop when a loss component stops being finite.
class TrainingAbort : public Error {
 public:
  TrainingAbort(const std::string& component, long iteration, double value)
      : Error("non-finite loss component '" + component + "' at iteration " +
              std::to_string(iteration) + " (value " + std::to_string(value) + ")"),
        component_(component),
        iteration_(iteration) {}
  const std::string& component() const noexcept { return component_; }
  long iteration() const noexcept { return iteration_; }

 private:
  std::string component_;
  long iteration_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double previous, double last)
      : Error(what + " (last iterates " + std::to_string(previous) + ", " + std::to_string(last) +
              ")"),
        previous_(previous),
        last_(last) {}
  double previous() const noexcept { return previous_; }
  double last() const noexcept { return last_; }

 private:
  double previous_;
  double last_;
};

}  // namespace clisa
