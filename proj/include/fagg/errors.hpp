#pragma once

#include <stdexcept>
#include <string>

namespace fagg {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

#define FAGG_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    using Error::Error;                                                 \
    ExitCode exit_code() const noexcept override { return Code; }       \
  };

// Invalid arguments or preconditions supplied by the caller.
FAGG_DEFINE_ERROR(ArgumentError, ExitCode::usage)
// Invalid model or run configuration.
FAGG_DEFINE_ERROR(ConfigError, ExitCode::usage)
// Syntactically malformed input file.
FAGG_DEFINE_ERROR(ParseError, ExitCode::data)
// Well-formed input whose shape disagrees with its declared metadata.
FAGG_DEFINE_ERROR(SchemaError, ExitCode::data)
// Inconsistent data content (duplicate ids, unknown labels, mismatched universes).
FAGG_DEFINE_ERROR(DataError, ExitCode::data)
// Corrupt or incompatible binary file.
FAGG_DEFINE_ERROR(FormatError, ExitCode::data)
// Non-finite values or singular systems.
FAGG_DEFINE_ERROR(NumericError, ExitCode::numeric)
// Divergence during training.
FAGG_DEFINE_ERROR(TrainingError, ExitCode::numeric)

#undef FAGG_DEFINE_ERROR

}  // namespace fagg
