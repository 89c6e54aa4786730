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

#include <cstdint>
#include <string>
#include <vector>

#include "lightdiff/envmap.hpp"
#include "lightdiff/image.hpp"
#include "lightdiff/renderer.hpp"

namespace lightdiff {

enum class SilhouetteKind { kBars, kBlob, kLeaves };

const char* to_string(SilhouetteKind kind);
SilhouetteKind parse_silhouette_kind(const std::string& s);

/// Occluder cut-out wrapped on a vertical cylinder around the subject.
/// u runs around the axis (atan2(z, x) / 2pi), v runs downward from the top rim.
struct SilhouetteTexture {
  static constexpr int kWidth = 256;
  static constexpr int kHeight = 128;

  int width = kWidth;
  int height = kHeight;
  std::vector<float> occupancy;

  SilhouetteTexture() : occupancy(static_cast<std::size_t>(kWidth) * kHeight, 0.0f) {}
  SilhouetteTexture(int w, int h, float fill) : width(w), height(h), occupancy(static_cast<std::size_t>(w) * h, fill) {}

  float at(int i, int j) const { return occupancy[static_cast<std::size_t>(j) * width + i]; }
  float& at(int i, int j) { return occupancy[static_cast<std::size_t>(j) * width + i]; }
  /// Nearest-texel lookup; u wraps, v outside [0, 1) reads 0.
  float sample(double u, double v) const;
  double coverage() const;
};

SilhouetteTexture sample_silhouette(SilhouetteKind kind, std::uint64_t seed);

/// Cylinder around the subject: vertical axis through the origin.
struct ShadowCylinder {
  double radius = 2.0;
  double half_height = 2.0;
};

ShadowCylinder default_cylinder(const Scene& scene);

/// Occupancy seen from each subject pixel looking towards the light. Zero off
/// the subject. Throws kPrecondition for a non-unit light direction.
GrayImage project_shadow_mask(const Renderer& renderer, const SilhouetteTexture& sil, const Vec3& light_dir);
GrayImage project_shadow_mask(const Scene& scene, const SilhouetteTexture& sil, const Vec3& light_dir,
                              Resolution resolution);

struct ShadowAugParams {
  double cone_half_angle_deg = 20.0;
  double sigma_max_fraction = 0.04;
  double opacity_min = 0.2;
  double opacity_max = 0.95;
};

struct ExternalShadow {
  ImageBuffer image;
  ImageBuffer removed;  // render with the dominant-light cone zeroed
  GrayImage blurred_mask;
  double sigma = 0.0;
  double opacity = 0.0;
  double gini = 0.0;
  bool clamped = false;
};

/// Blends the render towards its dominant-light-removed version through the
/// blurred mask. G outside [0, 1] is clamped with a warning.
ExternalShadow apply_external_shadow(const Renderer& renderer, const RenderBundle& bundle, const EnvironmentMap& env,
                                     const GrayImage& mask, double gini, const ShadowAugParams& params = {});

struct TintParams {
  double band_low = 0.15;
  double band_high = 0.85;
  double strength = 0.15;
};

/// Reddens skin pixels in the penumbra band of the (blurred) mask, peaking at 0.5.
ImageBuffer subsurface_tint(const ImageBuffer& img, const GrayImage& mask, const GrayImage& skin_mask,
                            const TintParams& params = {});

}  // namespace lightdiff
