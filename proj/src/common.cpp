/*
 * Copyright (C) 2026 The Lightdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lightdiff/error.hpp"
#include "lightdiff/types.hpp"

namespace lightdiff {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kUndefinedGini: return "undefined-gini";
    case ErrorCode::kDegenerateLighting: return "degenerate-lighting";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kSaturatedShadow: return "saturated-shadow";
    case ErrorCode::kDegenerateTint: return "degenerate-tint";
    case ErrorCode::kEmptyRegion: return "empty-region";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

bool is_validation(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kDivergence:
    case ErrorCode::kInternal:
      return false;
    default:
      return true;
  }
}

void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

double luminance(const Rgb& rgb) {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(rgb[c]) || rgb[c] < 0.0) fail(ErrorCode::kPrecondition, "luminance of negative or non-finite RGB");
  }
  return luminance_unchecked(rgb.r, rgb.g, rgb.b);
}

double chromaticity_angle_deg(const Rgb& a, const Rgb& b) {
  const double na = std::sqrt(a.r * a.r + a.g * a.g + a.b * a.b);
  const double nb = std::sqrt(b.r * b.r + b.g * b.g + b.b * b.b);
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::kPrecondition, "chromaticity of a zero vector");
  const double c = std::clamp((a.r * b.r + a.g * b.g + a.b * b.b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace lightdiff
