#pragma once

#include <stdexcept>
#include <string>

namespace thinkstate {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct VocabularyError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct CacheError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct SupervisionError : Error { using Error::Error; };
struct AlignmentError : Error { using Error::Error; };
struct ProgramError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

}  // namespace thinkstate
