#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace batchal {

enum class Errc {
  DimensionMismatch,
  NotSymmetric,
  NotPositiveDefinite,
  Saturated,
  IndexOutOfRange,
  EmptyGallery,
  BatchTooLarge,
  PoolTooSmall,
  TieUndefined,
  ParseError,
  NonContiguousIds,
  NonFinite,
  ExhaustedSampling,
  DomainError,
  DegenerateVariance,
  InvalidArgument,
  IoError,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace batchal
