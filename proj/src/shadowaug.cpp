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

#include "lightdiff/shadowaug.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <spdlog/spdlog.h>

#include "lightdiff/error.hpp"

namespace lightdiff {

namespace {

constexpr double kPi = std::numbers::pi;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double wrapped_du(double a, double b) {
  double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

SilhouetteTexture make_bars(std::mt19937_64& rng) {
  SilhouetteTexture t;
  std::uniform_int_distribution<int> count(6, 16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int bars = count(rng);
  const double phase = u(rng);
  for (int i = 0; i < t.width; ++i) {
    const double s = (i + 0.5) / t.width * bars + phase;
    const float v = (s - std::floor(s)) < 0.5 ? 1.0f : 0.0f;
    for (int j = 0; j < t.height; ++j) t.at(i, j) = v;
  }
  return t;
}

// Soft iso-contour of a sum of Gaussians, thresholded at a drawn quantile.
SilhouetteTexture make_blob(std::mt19937_64& rng) {
  SilhouetteTexture t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(3, 8);
  struct G {
    double u, v, s, a;
  };
  std::vector<G> blobs(static_cast<std::size_t>(count(rng)));
  for (auto& b : blobs) b = {u(rng), u(rng), 0.05 + 0.15 * u(rng), 0.5 + u(rng)};
  std::vector<double> field(t.occupancy.size());
  for (int j = 0; j < t.height; ++j) {
    for (int i = 0; i < t.width; ++i) {
      const double uu = (i + 0.5) / t.width;
      const double vv = (j + 0.5) / t.height;
      double f = 0.0;
      for (const auto& b : blobs) {
        const double du = wrapped_du(uu, b.u);
        const double dv = (vv - b.v) * 0.5;
        f += b.a * std::exp(-(du * du + dv * dv) / (2.0 * b.s * b.s));
      }
      field[static_cast<std::size_t>(j) * t.width + i] = f;
    }
  }
  std::vector<double> sorted = field;
  const double target = 0.3 + 0.4 * u(rng);
  const auto k = static_cast<std::size_t>((1.0 - target) * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double thr = sorted[k];
  const double soft = 0.02 * (thr + 1e-6);
  for (std::size_t p = 0; p < field.size(); ++p)
    t.occupancy[p] = static_cast<float>(smoothstep(thr - soft, thr + soft, field[p]));
  return t;
}

// Rotated ellipses stamped until the coverage target is reached.
SilhouetteTexture make_leaves(std::mt19937_64& rng) {
  SilhouetteTexture t;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double target = 0.3 + 0.4 * u(rng);
  double covered = 0.0;
  const double n = static_cast<double>(t.occupancy.size());
  for (int leaf = 0; leaf < 4000 && covered < target * n; ++leaf) {
    const double cu = u(rng), cv = u(rng);
    const double a = 0.01 + 0.03 * u(rng);
    const double b = a * (0.3 + 0.3 * u(rng));
    const double ang = kPi * u(rng);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const int ri = static_cast<int>(std::ceil(a * t.width)) + 1;
    const int rj = static_cast<int>(std::ceil(a * t.height * 2.0)) + 1;
    const int ci = static_cast<int>(cu * t.width);
    const int cj = static_cast<int>(cv * t.height);
    for (int dj = -rj; dj <= rj; ++dj) {
      const int j = cj + dj;
      if (j < 0 || j >= t.height) continue;
      for (int di = -ri; di <= ri; ++di) {
        const int i = ((ci + di) % t.width + t.width) % t.width;
        const double du = static_cast<double>(di) / t.width;
        const double dv = static_cast<double>(dj) / t.height * 0.5;
        const double x = ca * du + sa * dv;
        const double y = -sa * du + ca * dv;
        if ((x * x) / (a * a) + (y * y) / (b * b) <= 1.0 && t.at(i, j) == 0.0f) {
          t.at(i, j) = 1.0f;
          covered += 1.0;
        }
      }
    }
  }
  return t;
}

}  // namespace

const char* to_string(SilhouetteKind kind) {
  switch (kind) {
    case SilhouetteKind::kBars: return "bars";
    case SilhouetteKind::kBlob: return "blob";
    case SilhouetteKind::kLeaves: return "leaves";
  }
  return "?";
}

SilhouetteKind parse_silhouette_kind(const std::string& s) {
  if (s == "bars") return SilhouetteKind::kBars;
  if (s == "blob") return SilhouetteKind::kBlob;
  if (s == "leaves") return SilhouetteKind::kLeaves;
  fail(ErrorCode::kParameter, "unknown silhouette kind '" + s + "'");
}

float SilhouetteTexture::sample(double u, double v) const {
  if (!(v >= 0.0 && v < 1.0)) return 0.0f;
  u -= std::floor(u);
  const int i = std::min(width - 1, static_cast<int>(u * width));
  const int j = std::min(height - 1, static_cast<int>(v * height));
  return at(i, j);
}

double SilhouetteTexture::coverage() const {
  double s = 0.0;
  for (float v : occupancy) s += v;
  return occupancy.empty() ? 0.0 : s / static_cast<double>(occupancy.size());
}

SilhouetteTexture sample_silhouette(SilhouetteKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  switch (kind) {
    case SilhouetteKind::kBars: return make_bars(rng);
    case SilhouetteKind::kBlob: return make_blob(rng);
    case SilhouetteKind::kLeaves: return make_leaves(rng);
  }
  fail(ErrorCode::kParameter, "unknown silhouette kind");
}

ShadowCylinder default_cylinder(const Scene& scene) {
  const double r = 2.0 * scene.bounding_radius();
  return {r, r};
}

GrayImage project_shadow_mask(const Renderer& renderer, const SilhouetteTexture& sil, const Vec3& light_dir) {
  require(is_unit(light_dir), ErrorCode::kPrecondition, "light direction must be unit length");
  const ShadowCylinder cyl = default_cylinder(renderer.scene());
  const Resolution res = renderer.resolution();
  GrayImage mask(res.width, res.height);
  const double a = light_dir.x * light_dir.x + light_dir.z * light_dir.z;
  if (a < 1e-12) return mask;
  const auto& samples = renderer.samples();
  for (std::size_t p = 0; p < samples.size(); ++p) {
    if (!samples[p].covered) continue;
    const Vec3& o = samples[p].surface.position;
    const double b = o.x * light_dir.x + o.z * light_dir.z;
    const double c = o.x * o.x + o.z * o.z - cyl.radius * cyl.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) continue;
    const double t = (-b + std::sqrt(disc)) / a;
    if (t <= 0.0) continue;
    const Vec3 hit = o + light_dir * t;
    if (std::abs(hit.y) > cyl.half_height) continue;
    double u = std::atan2(hit.z, hit.x) / (2.0 * kPi);
    const double v = (cyl.half_height - hit.y) / (2.0 * cyl.half_height);
    mask[p] = sil.sample(u, v);
  }
  return mask;
}

GrayImage project_shadow_mask(const Scene& scene, const SilhouetteTexture& sil, const Vec3& light_dir,
                              Resolution resolution) {
  return project_shadow_mask(Renderer(scene, resolution), sil, light_dir);
}

ExternalShadow apply_external_shadow(const Renderer& renderer, const RenderBundle& bundle, const EnvironmentMap& env,
                                     const GrayImage& mask, double gini, const ShadowAugParams& params) {
  require(bundle.image.same_size(mask), ErrorCode::kDimensionMismatch, "mask must match the rendered image");
  ExternalShadow out;
  if (!(gini >= 0.0 && gini <= 1.0)) {
    const double g = std::isfinite(gini) ? std::clamp(gini, 0.0, 1.0) : 0.0;
    spdlog::warn("external shadow: Gini {} outside [0, 1], clamped to {}", gini, g);
    gini = g;
    out.clamped = true;
  }
  out.gini = gini;
  const Vec3 dominant = dominant_light_direction(env);
  const EnvironmentMap removed_env = remove_cone(env, dominant, params.cone_half_angle_deg * kPi / 180.0);
  out.removed = renderer.render_env(removed_env).image;
  out.sigma = params.sigma_max_fraction * bundle.image.width() * (1.0 - gini);
  out.opacity = params.opacity_min + (params.opacity_max - params.opacity_min) * gini;
  out.blurred_mask = gaussian_blur(mask, out.sigma);
  const auto alpha = bundle.image.alpha_data();
  for (std::size_t p = 0; p < alpha.size(); ++p)
    if (alpha[p] <= 0.0f) out.blurred_mask[p] = 0.0f;

  out.image = bundle.image;
  auto dst = out.image.rgb_data();
  const auto src = bundle.image.rgb_data();
  const auto rem = out.removed.rgb_data();
  for (std::size_t p = 0; p < alpha.size(); ++p) {
    const float w = static_cast<float>(out.opacity) * out.blurred_mask[p];
    if (w == 0.0f) continue;
    for (int c = 0; c < 3; ++c) dst[3 * p + c] = src[3 * p + c] + w * (rem[3 * p + c] - src[3 * p + c]);
  }
  return out;
}

ImageBuffer subsurface_tint(const ImageBuffer& img, const GrayImage& mask, const GrayImage& skin_mask,
                            const TintParams& params) {
  require(img.same_size(mask) && img.same_size(skin_mask), ErrorCode::kDimensionMismatch,
          "image, mask and skin mask must have equal dimensions");
  ImageBuffer out = img;
  const double mid = 0.5 * (params.band_low + params.band_high);
  const double half = 0.5 * (params.band_high - params.band_low);
  auto rgb = out.rgb_data();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double m = mask[p];
    if (skin_mask[p] <= 0.5f || m < params.band_low || m > params.band_high) continue;
    const double w = std::max(0.0, 1.0 - std::abs(m - mid) / half);
    rgb[3 * p] = static_cast<float>(rgb[3 * p] * (1.0 + params.strength * w));
  }
  return out;
}

}  // namespace lightdiff
