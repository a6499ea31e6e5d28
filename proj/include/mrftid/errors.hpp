#pragma once

#include <stdexcept>
#include <string>

namespace mrftid {

// Base of every error thrown by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// A time constant or delay would collapse to zero.
class DegenerateParameterError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

class NotSteadyError : public Error {
 public:
  using Error::Error;
};

class TooSlowError : public Error {
 public:
  using Error::Error;
};

class NoCrossingError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class InvalidStartError : public Error {
 public:
  using Error::Error;
};

class DiscretizationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A class of the discrete set could not produce a usable training sample.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrftid
