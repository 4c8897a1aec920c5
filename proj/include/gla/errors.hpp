#pragma once

#include <stdexcept>
#include <string>

namespace gla {

// Every failure raised by the library derives from Error so callers can
// catch the family or a specific kind.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct NoNullSpace : Error { using Error::Error; };
struct ShortfallError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct StageError : Error { using Error::Error; };

}  // namespace gla
