#pragma once

#include <stdexcept>
#include <string>

namespace raki {

// All library failures derive from Error so callers can catch one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct ChannelPairingError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct CoverageError : Error { using Error::Error; };
struct GroupError : Error { using Error::Error; };
struct EmptyBatchError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

} // namespace raki
