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
#include <span>
#include <vector>

#include "lightdiff/types.hpp"

namespace lightdiff {

/// Equirectangular HDR environment map.
///
/// Rows are colatitude (row 0 is the north pole, +y), columns are longitude.
/// Texel (r, c) is centered at theta = pi (r + 0.5) / height and
/// phi = 2 pi (c + 0.5) / width. The direction for (theta, phi) is
/// (sin theta cos phi, cos theta, sin theta sin phi), so phi = pi/2 on the
/// equator points at +z (towards the camera).
class EnvironmentMap {
 public:
  EnvironmentMap() = default;
  /// Throws kPrecondition unless width >= 4 and height >= 2.
  EnvironmentMap(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t texel_count() const { return radiance_.size(); }

  const Rgb& at(int row, int col) const { return radiance_[index(row, col)]; }
  Rgb& at(int row, int col) { return radiance_[index(row, col)]; }
  const Rgb& operator[](std::size_t i) const { return radiance_[i]; }
  Rgb& operator[](std::size_t i) { return radiance_[i]; }
  std::span<const Rgb> texels() const { return radiance_; }
  std::span<Rgb> texels() { return radiance_; }

  double theta(int row) const;
  double phi(int col) const;
  double delta_theta() const;
  double delta_phi() const;
  Vec3 direction(int row, int col) const;
  /// sin(theta) * dtheta * dphi for the texel's row.
  double solid_angle(int row) const;

  /// Throws kPrecondition if any component is negative or non-finite.
  void validate() const;

  bool operator==(const EnvironmentMap&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Rgb> radiance_;
};

Vec3 direction_from_angles(double theta, double phi);

struct DiffusenessReport {
  double gini = 0.0;
  Rgb mean_radiance;
  Vec3 dominant_direction;
};

/// Per-texel diffuseness samples x_i = luminance(E_i) * sin(theta_i).
std::vector<double> gini_samples(const EnvironmentMap& env);

/// Gini coefficient of a non-negative sample set by the sorted O(k log k) form.
/// Throws kUndefinedGini when the samples sum to zero.
double gini_coefficient(std::span<const double> samples);

/// Gini coefficient of the sin(theta)-weighted luminance of `env`.
double gini(const EnvironmentMap& env);

/// Solid-angle-weighted mean radiance per channel.
Rgb mean_radiance(const EnvironmentMap& env);

/// Unit direction of the strongest light: the x_i-weighted centroid of texels
/// at or above the 99th percentile of x_i. When that centroid vanishes (e.g.
/// a full ring of equal texels) the direction of the lowest-index texel with
/// the maximal x_i is returned.
Vec3 dominant_light_direction(const EnvironmentMap& env);

DiffusenessReport analyze(const EnvironmentMap& env);

/// Convolution with the normalized clamped-cosine lobe (max(0, cos g))^n,
/// weighted by texel solid angle and normalized per output direction. The
/// output is out_height x (2 * out_height). Naive O(k_in * k_out).
EnvironmentMap diffuse_convolve(const EnvironmentMap& env, double n, int out_height);

/// Solid-angle-weighted box downsample by an integer factor in both axes.
/// Preserves total power. Dimensions must divide evenly.
EnvironmentMap downsample(const EnvironmentMap& env, int factor);

/// Bilinear resample (wrapping in phi, clamped in theta).
EnvironmentMap resample_bilinear(const EnvironmentMap& env, int width, int height);

/// diffuse_convolve with the input pre-downsampled to at most `work_height`
/// rows and the result bilinearly upsampled to out_height when needed.
EnvironmentMap diffuse_convolve_fast(const EnvironmentMap& env, double n, int out_height,
                                     int work_height = 32);

struct DiffusionParameter {
  double t = 0.0;
  bool clamped = false;
};

/// t = (G_t - G_d) / (G_s - G_d). Throws kDegenerateLighting if G_s <= G_d.
/// G_t outside [G_d, G_s] is clamped and flagged.
DiffusionParameter diffusion_parameter(double g_source, double g_diffuse, double g_target);

struct LightLobe {
  Vec3 direction{0.0, 1.0, 0.0};
  double width = 0.3;  // sigma, radians, in (0, pi]
  double intensity = 1.0;
  Rgb color = Rgb::gray(1.0);
};

struct ProceduralEnvSpec {
  int width = 32;
  int height = 16;
  Rgb ambient;
  std::vector<LightLobe> lobes;
  // Multiplicative per-texel noise amplitude in [0, 1), drawn from the seed.
  double noise = 0.0;
};

/// radiance = ambient + sum_l intensity_l * exp((w . d_l - 1) / sigma_l^2) * color_l,
/// optionally modulated by seeded noise. Deterministic for (spec, seed).
EnvironmentMap gen_procedural_env(const ProceduralEnvSpec& spec, std::uint64_t seed);

/// Texel-wise copy of `env` with every texel whose direction lies within
/// `half_angle` radians of `dir` set to zero.
EnvironmentMap remove_cone(const EnvironmentMap& env, const Vec3& dir, double half_angle);

}  // namespace lightdiff
