#pragma once

#include <stdexcept>
#include <string>

namespace streamkd {

// Error taxonomy mirrored by the CLI exit codes: config/usage problems exit 2,
// numeric divergence exits 3, failed validation commands exit 4, I/O exits 1.

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// malformed dimensions: mismatched layer chains, wrong vector lengths
struct shape_error : error {
  using error::error;
};

// bad config values, unknown keys, invalid CLI arguments
struct config_error : error {
  using error::error;
};

// unreadable file content; message carries the 1-based line number
struct parse_error : error {
  using error::error;
};

// non-finite loss or gradient, failed convergence
struct numeric_error : error {
  using error::error;
};

// signal store misuse: duplicate keys, range outside the high-water mark
struct store_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

}  // namespace streamkd
