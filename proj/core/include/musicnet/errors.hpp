#pragma once

#include <stdexcept>
#include <string>

namespace musicnet {

/// Base of every error raised by the library. Callers that only care about
/// "something failed" catch this; the CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MUSICNET_DEFINE_ERROR(Name)         \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

// A precondition of an operation was not met (wrong shape, wrong length...).
MUSICNET_DEFINE_ERROR(ContractViolation);

// audio_io
MUSICNET_DEFINE_ERROR(DecodeError);
MUSICNET_DEFINE_ERROR(UnsupportedFormat);
MUSICNET_DEFINE_ERROR(UnsupportedRate);
MUSICNET_DEFINE_ERROR(EmptyInput);

// model / weight file
MUSICNET_DEFINE_ERROR(FormatError);
MUSICNET_DEFINE_ERROR(TopologyError);
MUSICNET_DEFINE_ERROR(IntegrityError);

// train
MUSICNET_DEFINE_ERROR(NonFiniteGradient);
MUSICNET_DEFINE_ERROR(EmptyDataset);

// data_synth
MUSICNET_DEFINE_ERROR(SilentStem);
MUSICNET_DEFINE_ERROR(ManifestError);

// eval_bench
MUSICNET_DEFINE_ERROR(DegenerateSet);

#undef MUSICNET_DEFINE_ERROR

}  // namespace musicnet
