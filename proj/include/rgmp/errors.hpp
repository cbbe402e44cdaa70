#pragma once

#include <stdexcept>
#include <string>

namespace rgmp {

// Error taxonomy mirrors the CLI exit-code contract:
//   0 = success, 1 = validation failure, 2 = I/O error, 3 = numerical failure.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumerical = 3;

}  // namespace rgmp
