#include "usbrain/error.hpp"

namespace usbrain {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::NonPositiveDim: return "NonPositiveDim";
    case Errc::NonPositiveSpacing: return "NonPositiveSpacing";
    case Errc::IoFailure: return "IoFailure";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IndivisibleDim: return "IndivisibleDim";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NonDifferentiablePoint: return "NonDifferentiablePoint";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::SpecMismatch: return "SpecMismatch";
    case Errc::InvalidTransform: return "InvalidTransform";
    case Errc::NotARotation: return "NotARotation";
    case Errc::GaOutOfRange: return "GaOutOfRange";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::EmptyList: return "EmptyList";
    case Errc::ConstantSeries: return "ConstantSeries";
    case Errc::DegenerateSeries: return "DegenerateSeries";
    case Errc::ZeroMass: return "ZeroMass";
    case Errc::InsufficientCases: return "InsufficientCases";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace usbrain
