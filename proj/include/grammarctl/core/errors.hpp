// Copyright 2026 The grammarctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grammarctl {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that is structurally broken (bad file row, bad JSON record).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0)
      : Error(row ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Well-formed input whose values break a domain rule.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A named entity (skill, subcategory, session, model) does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Failure while running a pipeline stage (training, inference, I/O).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

// User-facing input errors map to exit code 1; everything else to 2.
inline bool is_input_error(const std::exception& e) {
  return dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
         dynamic_cast<const LookupError*>(&e) || dynamic_cast<const PreconditionError*>(&e);
}

}  // namespace grammarctl
