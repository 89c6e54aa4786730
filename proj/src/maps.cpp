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

#include "lightdiff/maps.hpp"

#include <algorithm>

#include "lightdiff/error.hpp"

namespace lightdiff {

SpecShadowPair compute_spec_shadow(const ImageBuffer& image, const ImageBuffer& diffuse, const GrayImage& alpha) {
  require(image.same_size(diffuse) && image.same_size(alpha), ErrorCode::kDimensionMismatch,
          "image, diffuse image and alpha must have equal dimensions");
  const GrayImage li = image.luminance();
  const GrayImage ld = diffuse.luminance();
  SpecShadowPair out{GrayImage(image.width(), image.height()), GrayImage(image.width(), image.height())};
  for (std::size_t p = 0; p < li.size(); ++p) {
    if (alpha[p] <= 0.0f) continue;
    // Within eps of equality both guarded ratios dip below 1; the sign of the difference picks the side.
    if (li[p] >= ld[p]) {
      out.specular[p] = static_cast<float>(std::clamp(1.0 - ld[p] / (li[p] + kRatioEpsilon), 0.0, 1.0));
    } else {
      out.shadow[p] = static_cast<float>(std::clamp(1.0 - li[p] / (ld[p] + kRatioEpsilon), 0.0, 1.0));
    }
  }
  return out;
}

GrayImage reconstruct_diffuse(const ImageBuffer& image, const SpecShadowPair& pair, const GrayImage& alpha) {
  require(image.same_size(pair.specular) && image.same_size(pair.shadow) && image.same_size(alpha),
          ErrorCode::kDimensionMismatch, "image, maps and alpha must have equal dimensions");
  const GrayImage li = image.luminance();
  GrayImage out(image.width(), image.height());
  for (std::size_t p = 0; p < li.size(); ++p) {
    const double l = li[p];
    const double s = pair.specular[p];
    const double d = pair.shadow[p];
    if (alpha[p] > 0.0f && d >= 1.0) fail(ErrorCode::kSaturatedShadow, "shadow map saturated at 1; diffuse value is lost");
    if (s > 0.0) {
      out[p] = static_cast<float>((1.0 - s) * (l + kRatioEpsilon));
    } else if (d > 0.0) {
      out[p] = static_cast<float>(l / (1.0 - d) - kRatioEpsilon);
    } else {
      out[p] = static_cast<float>(l);
    }
  }
  return out;
}

ImageBuffer composite(const ImageBuffer& fg, const GrayImage& alpha, const ImageBuffer& bg) {
  require(fg.same_size(bg) && fg.same_size(alpha), ErrorCode::kDimensionMismatch,
          "foreground, alpha and background must have equal dimensions");
  ImageBuffer out = bg;
  for (std::size_t p = 0; p < alpha.size(); ++p) {
    const float a = alpha[p];
    for (int c = 0; c < 3; ++c) {
      out.rgb_data()[3 * p + c] = a * fg.rgb_data()[3 * p + c] + (1.0f - a) * bg.rgb_data()[3 * p + c];
    }
  }
  return out;
}

}  // namespace lightdiff
