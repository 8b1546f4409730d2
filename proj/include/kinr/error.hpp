#pragma once

#include <stdexcept>
#include <string>

namespace kinr {

struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Invalid numeric domain: non-finite input, zero normalizer, coordinates out of range.
struct DomainError : Error
{
  using Error::Error;
};

// Invalid parameters or configuration documents.
struct ConfigError : Error
{
  using Error::Error;
};

struct ShapeError : Error
{
  using Error::Error;
};

// Payload contents failed validation (NaN, Inf, truncated data).
struct DataError : Error
{
  using Error::Error;
};

struct IoError : Error
{
  using Error::Error;
};

struct FormatVersionError : Error
{
  using Error::Error;
};

struct IncompatibleCheckpoint : Error
{
  using Error::Error;
};

// Training diverged (non-finite loss or gradients).
struct NumericalError : Error
{
  using Error::Error;
};

} // namespace kinr
