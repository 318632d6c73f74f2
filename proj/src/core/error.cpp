#include "eegrecon/error.hpp"

namespace eegrecon {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingManifest: return "MissingManifest";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UnknownTrialId: return "UnknownTrialId";
    case Errc::InvalidChannelIndex: return "InvalidChannelIndex";
    case Errc::RatioSumError: return "RatioSumError";
    case Errc::InfeasibleCoverage: return "InfeasibleCoverage";
    case Errc::IdentityNotAllowed: return "IdentityNotAllowed";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::DivergenceError: return "DivergenceError";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::BadWays: return "BadWays";
    case Errc::BadK: return "BadK";
    case Errc::BadDimensions: return "BadDimensions";
    case Errc::TimestepOutOfRange: return "TimestepOutOfRange";
    case Errc::NotTrained: return "NotTrained";
    case Errc::BadStrength: return "BadStrength";
    case Errc::FrozenWeightMutation: return "FrozenWeightMutation";
    case Errc::RemoteTimeout: return "RemoteTimeout";
    case Errc::RemoteMalformedResponse: return "RemoteMalformedResponse";
    case Errc::DescriberUnavailable: return "DescriberUnavailable";
    case Errc::EmptyDescription: return "EmptyDescription";
    case Errc::TooFewImages: return "TooFewImages";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::NonPSDProduct: return "NonPSDProduct";
    case Errc::ZeroEmbedding: return "ZeroEmbedding";
    case Errc::EmptyRegion: return "EmptyRegion";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TooFewTrials: return "TooFewTrials";
    case Errc::MissingPrerequisite: return "MissingPrerequisite";
    case Errc::ConfigValidationError: return "ConfigValidationError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace eegrecon
