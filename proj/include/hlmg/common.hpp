#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hlmg {

using Rng = std::mt19937_64;

// SplitMix64-style mixing; derives independent seeds for per-sample streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape incompatibilities in tensor primitives; message names the op and both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable file.
class FileError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted data; message carries line/field context.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint/config mismatch on load.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Training reached a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, long long last_finite_step)
      : Error(msg), last_finite_step(last_finite_step) {}
  long long last_finite_step;
};

}  // namespace hlmg
