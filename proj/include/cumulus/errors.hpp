#pragma once

#include <stdexcept>
#include <string>

namespace cumulus {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent tensor/graph extents.
struct ShapeError : Error {
  using Error::Error;
};

// Unknown architecture id or malformed graph topology.
struct ArchError : Error {
  using Error::Error;
};

// Model package serialization problems (manifest, blobs, missing weights).
struct ModelIOError : Error {
  using Error::Error;
};

// Quantization domain errors (bias overflow, exponent mismatch).
struct QuantError : Error {
  using Error::Error;
};

// Channel pruning errors (empty layers, inconsistent masks).
struct PruneError : Error {
  using Error::Error;
};

// Dataset construction errors (bad class codes, empty classes, shortfalls).
struct DataError : Error {
  using Error::Error;
};

// Bad call arguments (empty batches, mismatched lengths).
struct ArgumentError : Error {
  using Error::Error;
};

// API misuse across calls (stale caches).
struct StateError : Error {
  using Error::Error;
};

}  // namespace cumulus
