#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace usbrain {

enum class Errc {
  BadMagic,
  TruncatedPayload,
  NonPositiveDim,
  NonPositiveSpacing,
  IoFailure,
  ShapeMismatch,
  IndivisibleDim,
  LengthMismatch,
  NonDifferentiablePoint,
  InvalidSpec,
  SpecMismatch,
  InvalidTransform,
  NotARotation,
  GaOutOfRange,
  EmptyMask,
  EmptyList,
  ConstantSeries,
  DegenerateSeries,
  ZeroMass,
  InsufficientCases,
  InvalidConfig,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure in the library surfaces as this exception; the code carries
// the contract-level error kind so callers and tests can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace usbrain
