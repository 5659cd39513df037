#include "batchal/error.hpp"

namespace batchal {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::DimensionMismatch: return "dimension_mismatch";
    case Errc::NotSymmetric: return "not_symmetric";
    case Errc::NotPositiveDefinite: return "not_positive_definite";
    case Errc::Saturated: return "saturated";
    case Errc::IndexOutOfRange: return "index_out_of_range";
    case Errc::EmptyGallery: return "empty_gallery";
    case Errc::BatchTooLarge: return "batch_too_large";
    case Errc::PoolTooSmall: return "pool_too_small";
    case Errc::TieUndefined: return "tie_undefined";
    case Errc::ParseError: return "parse_error";
    case Errc::NonContiguousIds: return "non_contiguous_ids";
    case Errc::NonFinite: return "non_finite";
    case Errc::ExhaustedSampling: return "exhausted_sampling";
    case Errc::DomainError: return "domain_error";
    case Errc::DegenerateVariance: return "degenerate_variance";
    case Errc::InvalidArgument: return "invalid_argument";
    case Errc::IoError: return "io_error";
    case Errc::ConfigError: return "config_error";
  }
  return "unknown";
}

}  // namespace batchal
