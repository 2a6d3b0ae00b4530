#pragma once

#include <stdexcept>
#include <string>

namespace compress {

enum class Errc {
  ZeroNormRow,
  NonFinite,
  DimensionMismatch,
  NonPositiveTemperature,
  LengthMismatch,
  InvalidCapacity,
  UnnormalizedBatch,
  EmptyQueue,
  EmptyAnchors,
  StaleCache,
  InconsistentInputs,
  BankSmallerThanBatch,
  BatchTooSmall,
  KTooLarge,
  EmptyTrainSet,
  InvalidSpec,
  InvalidConfig,
  BadMagic,
  TruncatedFile,
  SizeMismatch,
  Io,
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace compress
