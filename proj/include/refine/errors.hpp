// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace refine {

// Exit codes surfaced by the command-line front end.
enum class ExitCode : int {
  kSuccess = 0,
  kValidation = 2,
  kNumerical = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
  virtual ExitCode exit_code() const noexcept { return ExitCode::kNumerical; }
};

#define REFINE_DECLARE_ERROR(Name, Base, Code)                       \
  class Name : public Base {                                         \
   public:                                                           \
    explicit Name(const std::string& what) : Base(what) {}           \
    const char* kind() const noexcept override { return #Name; }     \
    ExitCode exit_code() const noexcept override { return Code; }    \
  };

REFINE_DECLARE_ERROR(ValidationError, Error, ExitCode::kValidation)
REFINE_DECLARE_ERROR(ParseError, ValidationError, ExitCode::kValidation)
REFINE_DECLARE_ERROR(InsufficientSlopes, ValidationError, ExitCode::kValidation)
REFINE_DECLARE_ERROR(OutOfRange, ValidationError, ExitCode::kValidation)
REFINE_DECLARE_ERROR(TooLarge, ValidationError, ExitCode::kValidation)
REFINE_DECLARE_ERROR(CertificateInvalid, ValidationError, ExitCode::kValidation)
REFINE_DECLARE_ERROR(F1NotSourceOnly, ValidationError, ExitCode::kValidation)

REFINE_DECLARE_ERROR(NumericalError, Error, ExitCode::kNumerical)
REFINE_DECLARE_ERROR(AbsoluteContinuityViolation, NumericalError, ExitCode::kNumerical)
REFINE_DECLARE_ERROR(DegenerateMarginal, NumericalError, ExitCode::kNumerical)
REFINE_DECLARE_ERROR(NotConverged, NumericalError, ExitCode::kNumerical)
REFINE_DECLARE_ERROR(ZeroVariance, NumericalError, ExitCode::kNumerical)

REFINE_DECLARE_ERROR(IoError, Error, ExitCode::kIo)

#undef REFINE_DECLARE_ERROR

}  // namespace refine
