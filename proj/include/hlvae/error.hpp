#pragma once

#include <stdexcept>
#include <string>

namespace hlvae {

// Base class for every error raised by the library. `numerical()` separates
// user-facing input problems from numerical breakdowns (the CLI maps them to
// different exit codes).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual bool numerical() const { return false; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  bool numerical() const override { return true; }
};

#define HLVAE_DEFINE_ERROR(Name, Base)                                  \
  class Name : public Base {                                            \
   public:                                                              \
    explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
  };

// autodiff
HLVAE_DEFINE_ERROR(ShapeMismatch, Error)
HLVAE_DEFINE_ERROR(NotScalar, Error)
HLVAE_DEFINE_ERROR(NonFiniteValue, NumericalError)
HLVAE_DEFINE_ERROR(FactorizationFailure, NumericalError)
HLVAE_DEFINE_ERROR(SingularTriangular, NumericalError)

// data
HLVAE_DEFINE_ERROR(SchemaMismatch, Error)
HLVAE_DEFINE_ERROR(DomainViolation, Error)
HLVAE_DEFINE_ERROR(MissingCovariate, Error)
HLVAE_DEFINE_ERROR(TooFewVisits, Error)
HLVAE_DEFINE_ERROR(ParseError, Error)

// kernels / inference
HLVAE_DEFINE_ERROR(UnknownCovariate, Error)
HLVAE_DEFINE_ERROR(NotSorted, Error)
HLVAE_DEFINE_ERROR(MissingIndividualComponent, Error)
HLVAE_DEFINE_ERROR(IncompleteInstance, Error)
HLVAE_DEFINE_ERROR(NonFiniteLoss, NumericalError)
HLVAE_DEFINE_ERROR(UnknownInstance, Error)

// metrics
HLVAE_DEFINE_ERROR(EmptyHoldout, Error)

#undef HLVAE_DEFINE_ERROR

}  // namespace hlvae
