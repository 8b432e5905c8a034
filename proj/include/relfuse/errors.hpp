// Copyright 2026 The relfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RELFUSE_ERRORS_HPP_
#define RELFUSE_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relfuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, or an input whose dimensions disagree with the
/// configured model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A backward pass was given a cache that is empty, already consumed, or was
/// produced by a different forward call.
class CacheError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (tensor files, checkpoints, manifests).
class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kTruncated,
    kDimOverflow,
    kNonFinite,
    kBadVersion,
    kCorrupt,
    kIo,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace relfuse

#endif  // RELFUSE_ERRORS_HPP_
