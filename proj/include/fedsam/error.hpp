#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedsam {

// Every failure raised by the library derives from Error so callers can
// catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input violates a stated contract (probabilities, ranges, missing oracle).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class DistributionError : public Error {
 public:
  using Error::Error;
};

class ErgodicityError : public Error {
 public:
  using Error::Error;
};

class NearPeriodicError : public ErgodicityError {
 public:
  using ErgodicityError::ErgodicityError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, std::size_t agent)
      : Error("non-finite parameter at step " + std::to_string(step) +
              " on agent " + std::to_string(agent)),
        step_(step),
        agent_(agent) {}

  std::size_t step() const { return step_; }
  std::size_t agent() const { return agent_; }

 private:
  std::size_t step_;
  std::size_t agent_;
};

}  // namespace fedsam
