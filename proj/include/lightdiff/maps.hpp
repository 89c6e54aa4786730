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

#pragma once

#include "lightdiff/image.hpp"

namespace lightdiff {

/// Single-channel specular (brightening) and shadow (darkening) maps
/// relative to the fully diffuse render. Both lie in [0, 1] and are never
/// simultaneously positive.
struct SpecShadowPair {
  GrayImage specular;
  GrayImage shadow;
};

inline constexpr double kRatioEpsilon = 1e-4;

/// S = clamp(1 - lum(I_diffuse) / (lum(I) + eps), 0, 1) and
/// D = clamp(1 - lum(I) / (lum(I_diffuse) + eps), 0, 1) where alpha > 0,
/// zero elsewhere.
SpecShadowPair compute_spec_shadow(const ImageBuffer& image, const ImageBuffer& diffuse, const GrayImage& alpha);

/// Inverts compute_spec_shadow to recover lum(I_diffuse). Throws
/// kSaturatedShadow where D reached 1 on the subject.
GrayImage reconstruct_diffuse(const ImageBuffer& image, const SpecShadowPair& pair, const GrayImage& alpha);

/// alpha * fg + (1 - alpha) * bg in linear space. The result carries bg's alpha.
ImageBuffer composite(const ImageBuffer& fg, const GrayImage& alpha, const ImageBuffer& bg);

}  // namespace lightdiff
