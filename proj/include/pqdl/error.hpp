#pragma once

#include <stdexcept>
#include <string>

namespace pqdl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model description (incompatible layer chain, bad rates).
struct SpecError : Error {
  using Error::Error;
};

// Operand shapes disagree with the model or with each other.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data.
struct DataError : Error {
  using Error::Error;
};

// Optimization produced non-finite values or was misconfigured.
struct TrainingError : Error {
  using Error::Error;
};

// Bitstream corruption, header mismatch, nondeterminism detected.
struct CodecError : Error {
  using Error::Error;
};

// Experiment configuration rejected before compute starts.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace pqdl
