// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ssd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, negative radicands and similar numerical failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Failures reported by or while talking to a denoiser.
class DenoiserError : public Error {
 public:
  using Error::Error;
};

/// I/O failures (files, images, raw tensors).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssd
