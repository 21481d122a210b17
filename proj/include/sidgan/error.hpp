#pragma once

#include <stdexcept>
#include <string>

namespace sidgan {

// Root of every error this library raises. Subclasses exist so callers and
// tests can tell failure classes apart without parsing messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error {
  using Error::Error;
};

// Malformed tensor file: bad magic, truncated payload, unknown dtype code.
struct FormatError : Error {
  using Error::Error;
};

// Dataset manifest violates a schema invariant.
struct ManifestError : Error {
  using Error::Error;
};

// Tensor shapes or value ranges do not satisfy an operation's precondition.
struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// A loss became NaN or infinite.
struct DivergenceError : Error {
  using Error::Error;
};

// An evaluation or sampling protocol cannot be applied to the given data.
struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace sidgan
