/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace starprompt {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform; the message names the op and both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity was produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in a state that does not permit it.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input (bad magic, truncated payload, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (unknown key, preset, or flag combination).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A label is not among the classes the operation was asked to score.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure, always carrying the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace starprompt
