/* Copyright 2026 The qcntk Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace qcntk {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Qubit count, width or sample count outside the supported range.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Qubit, window or data index out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector/matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input violates a structural requirement (Hermiticity, symmetry, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar argument (zero shots, non-positive step, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Operation called on an incompletely prepared object.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite cost.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Malformed text input; carries the offending line number (1-based).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// Well-formed file with the wrong column layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; `what()` names the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qcntk
