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

#include <cmath>
#include <string>

#include "qcntk/errors.hpp"

namespace qcntk {

enum class Activation { ReLU, Sigmoid, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu" || s == "ReLU") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("unknown activation '" + s + "'");
}

inline double sigmoid(double q) {
  if (q >= 0) return 1.0 / (1.0 + std::exp(-q));
  const double e = std::exp(q);
  return e / (1.0 + e);
}

/// log(1 + e^q) without overflow.
inline double softplus(double q) { return q > 0 ? q + std::log1p(std::exp(-q)) : std::log1p(std::exp(q)); }

inline double activate(Activation a, double q) {
  switch (a) {
    case Activation::ReLU: return q > 0 ? q : 0.0;
    case Activation::Sigmoid: return sigmoid(q);
    case Activation::Identity: return q;
  }
  return q;
}

/// Derivative; the ReLU derivative at 0 is taken to be 0.
inline double activate_derivative(Activation a, double q) {
  switch (a) {
    case Activation::ReLU: return q > 0 ? 1.0 : 0.0;
    case Activation::Sigmoid: {
      const double s = sigmoid(q);
      return s * (1.0 - s);
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

/// Same derivative written in terms of the output s = activate(a, q).
inline double derivative_from_output(Activation a, double s) {
  switch (a) {
    case Activation::ReLU: return s > 0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return s * (1.0 - s);
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

}  // namespace qcntk
