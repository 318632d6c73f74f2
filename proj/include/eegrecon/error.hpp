#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eegrecon {

// Every failure the library reports carries one of these codes so callers
// (and the CLI exit-code mapping) can branch without parsing messages.
enum class Errc {
  MissingManifest,
  ShapeMismatch,
  UnknownTrialId,
  InvalidChannelIndex,
  RatioSumError,
  InfeasibleCoverage,
  IdentityNotAllowed,
  UnknownLabel,
  IndexOutOfRange,
  DivergenceError,
  EmptySplit,
  ChannelMismatch,
  BadWays,
  BadK,
  BadDimensions,
  TimestepOutOfRange,
  NotTrained,
  BadStrength,
  FrozenWeightMutation,
  RemoteTimeout,
  RemoteMalformedResponse,
  DescriberUnavailable,
  EmptyDescription,
  TooFewImages,
  DimMismatch,
  NonPSDProduct,
  ZeroEmbedding,
  EmptyRegion,
  CountMismatch,
  EmptyInput,
  TooFewTrials,
  MissingPrerequisite,
  ConfigValidationError,
  IoError,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace eegrecon
