// Copyright 2026 The Visage Authors
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

namespace visage {

/// Base class for every error raised by the library. Messages start with a
/// short, stable tag (e.g. "empty voicing") so callers and tests can match on it.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when tensor operands have incompatible shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

} // namespace visage
