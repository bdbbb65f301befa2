#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace basconv {

inline constexpr std::string_view kArtifactVersion = "0.1.0";

// Configuration problems: bad flags, missing columns, malformed config files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Integrity problems in input data (e.g. a basket owned by two users).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatches between matrices.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures (non-finite loss or gradients).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit. Used for config hashes and graph fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return s;
}

}  // namespace basconv
