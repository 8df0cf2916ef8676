// Copyright 2026 The CapNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace capnet {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument (maps to a usage failure in the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the byte offset or line number when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A stored artifact failed an integrity or compatibility check.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Training diverged or another runtime condition made progress impossible.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace capnet
