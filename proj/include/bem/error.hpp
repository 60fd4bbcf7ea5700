#pragma once

#include <stdexcept>
#include <string>

namespace bem {

// Base of every error thrown by the library. The CLI maps subclasses to exit
// codes (see cli.hpp).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Shapes of operands are incompatible.
class DimensionError : public Error {
  public:
    using Error::Error;
};

// An argument lies outside the mathematical domain of the operation.
class DomainError : public Error {
  public:
    using Error::Error;
};

// A caller-side precondition was violated (empty batch, missing noise source).
class ContractError : public Error {
  public:
    using Error::Error;
};

// A NaN or Inf was produced by an operation.
class NumericError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class CheckpointError : public Error {
  public:
    using Error::Error;
};

class MetricError : public Error {
  public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
  public:
    DivergenceError(std::size_t step, const std::string& what)
        : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

  private:
    std::size_t step_;
};

}  // namespace bem
