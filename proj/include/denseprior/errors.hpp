#pragma once

#include <stdexcept>
#include <string>

namespace dp {

// Base for every library error.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or combination (bad schedule kind, tap index
// out of range, non-positive lambda, ...).
struct config_error : error {
  using error::error;
};

// API misuse: wrong call order, wrong bundle tag, bad argument count.
struct usage_error : error {
  using error::error;
};

// Tensor shape disagreement.
struct shape_error : error {
  using error::error;
};

// Scalar argument outside its documented range (timestep, matte value, ...).
struct range_error : error {
  using error::error;
};

// Filesystem failure: missing file, unreadable/unwritable path.
struct io_error : error {
  using error::error;
};

// Malformed on-disk data; carries the byte offset where parsing stopped.
struct format_error : error {
  size_t offset = 0;
  format_error(const std::string& what, size_t at)
      : error(what + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
};

// Input that is technically well-formed but degenerate for the operation
// (constant depth map for a scale fit, empty mask, ...).
struct degenerate_error : error {
  using error::error;
};

// Non-finite values or a diverged computation.
struct numerical_error : error {
  using error::error;
};

// Procedural generation could not satisfy its constraints.
struct generation_error : config_error {
  using config_error::config_error;
};

}  // namespace dp
