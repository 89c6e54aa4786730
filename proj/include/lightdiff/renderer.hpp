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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lightdiff/envmap.hpp"
#include "lightdiff/image.hpp"
#include "lightdiff/types.hpp"

namespace lightdiff {

enum class GeometryKind { kSphere, kBust };
enum class AlbedoPattern { kFlat, kTwoTone, kNoise };

const char* to_string(GeometryKind kind);
const char* to_string(AlbedoPattern pattern);
GeometryKind parse_geometry(const std::string& s);
AlbedoPattern parse_albedo_pattern(const std::string& s);

/// Opaque rectangle floating in the scene.
struct OccluderSpec {
  Vec3 center{0.0, 0.0, 2.0};
  Vec3 normal{0.0, 0.0, 1.0};
  Vec3 up{0.0, 1.0, 0.0};
  double half_width = 0.5;
  double half_height = 0.5;
};

struct SceneSpec {
  GeometryKind geometry = GeometryKind::kSphere;
  AlbedoPattern albedo = AlbedoPattern::kFlat;
  Rgb skin_albedo = Rgb::gray(0.5);  // whole surface for kFlat / kNoise
  Rgb clothing_albedo{0.2, 0.3, 0.6};
  double skin_fraction = 0.4;    // kTwoTone: share of surface samples that are skin
  double noise_amplitude = 0.25;  // kNoise: relative albedo modulation
  double specular_strength = 0.0;
  double specular_exponent = 16.0;
  std::optional<OccluderSpec> occluder;
};

/// Throws kPrecondition on out-of-range fields.
void validate(const SceneSpec& spec);

struct SurfacePoint {
  Vec3 position;
  Vec3 normal;
};

/// Synthetic subject: a unit sphere or a face-like relief ("bust") over the
/// unit disk, seen by an orthographic camera looking down -z. Surface
/// attributes live in textures over the (x, y) footprint.
class Scene {
 public:
  static constexpr int kTextureSize = 128;
  static constexpr int kHeightGridSize = 160;

  Scene(const SceneSpec& spec, std::uint64_t seed);

  const SceneSpec& spec() const { return spec_; }
  GeometryKind geometry() const { return spec_.geometry; }
  double bounding_radius() const { return 1.0; }

  /// First intersection of the camera ray through (x, y).
  std::optional<SurfacePoint> intersect_camera_ray(double x, double y) const;

  Rgb albedo_at(double x, double y) const;
  bool skin_at(double x, double y) const;

  /// True if the ray from `p` towards `dir` hits the subject itself or the occluder.
  bool occluded(const SurfacePoint& p, const Vec3& dir) const;
  bool occluder_blocks(const Vec3& p, const Vec3& dir) const;

  // Texture access for mask statistics.
  const std::vector<Rgb>& albedo_texture() const { return albedo_; }
  const std::vector<std::uint8_t>& skin_texture() const { return skin_; }
  /// True for texture texels whose center lies on the surface footprint.
  bool texel_on_surface(int i, int j) const;

 private:
  struct Bump {
    double cx, cy, amp, sx, sy;
  };

  double bust_height(double x, double y, double* dhdx, double* dhdy) const;
  double grid_height(double x, double y) const;
  bool self_occluded(const SurfacePoint& p, const Vec3& dir) const;
  std::pair<int, int> texel(double x, double y) const;

  SceneSpec spec_;
  std::vector<Bump> bumps_;
  std::vector<float> height_grid_;
  double max_height_ = 1.0;
  std::vector<Rgb> albedo_;
  std::vector<std::uint8_t> skin_;
};

Scene build_scene(const SceneSpec& spec, std::uint64_t seed);

struct Resolution {
  int width = 64;
  int height = 64;
  bool operator==(const Resolution&) const = default;
};

struct RenderOptions {
  // Environment maps taller than this are downsampled before integration.
  int env_height = 16;
  // Half-extent of the square orthographic frustum (subject radius is 1).
  double frame_extent = 1.1;
};

/// Per-pixel camera samples of a scene.
struct PixelSample {
  bool covered = false;
  SurfacePoint surface;
  Rgb albedo;
  bool skin = false;
};

struct RenderBundle {
  ImageBuffer image;
  ImageBuffer albedo_gt;
  GrayImage skin_mask;
  std::vector<Vec3> normals;  // zero outside the silhouette
};

/// Precomputed one-light-at-a-time responses for every pixel and every texel
/// direction of one environment grid. Light-independent apart from scale.
struct OlatBasis {
  int env_width = 0;
  int env_height = 0;
  std::vector<Vec3> directions;
  std::vector<double> texel_weight;  // sin(theta) dtheta dphi
  // [pixel * directions + i]: visibility * max(0, n.w) / pi and
  // visibility * k_s * max(0, r.w)^s.
  std::vector<float> diffuse;
  std::vector<float> specular;
};

/// Renders one scene at one resolution. Camera samples and OLAT bases are
/// cached; all render calls are const and safe to call concurrently.
class Renderer {
 public:
  Renderer(Scene scene, Resolution resolution, RenderOptions options = {});

  const Scene& scene() const { return scene_; }
  Resolution resolution() const { return resolution_; }
  const RenderOptions& options() const { return options_; }
  const std::vector<PixelSample>& samples() const { return samples_; }

  /// Single distant light. Throws kPrecondition for a non-unit direction.
  ImageBuffer render_olat(const Vec3& light_dir, const Rgb& light_rgb) const;

  /// Discrete environment integral: sum_i olat(w_i, E_i sin(theta_i) dtheta dphi).
  RenderBundle render_env(const EnvironmentMap& env) const;

  /// render_env under the cosine-lobe-convolved map at the integration grid.
  ImageBuffer render_diffused(const EnvironmentMap& env, double n) const;

  /// `env` brought to the integration grid (downsampled when taller than
  /// options.env_height, unchanged otherwise).
  EnvironmentMap integration_map(const EnvironmentMap& env) const;

  const OlatBasis& basis(int env_width, int env_height) const;

  GrayImage alpha() const;
  ImageBuffer albedo_image() const;
  GrayImage skin_mask() const;

 private:
  Scene scene_;
  Resolution resolution_;
  RenderOptions options_;
  std::vector<PixelSample> samples_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<int, int>, std::shared_ptr<const OlatBasis>> cache_;
};

ImageBuffer render_olat(const Scene& scene, const Vec3& light_dir, const Rgb& light_rgb, Resolution resolution);
RenderBundle render_env(const Scene& scene, const EnvironmentMap& env, Resolution resolution);
ImageBuffer render_diffused(const Scene& scene, const EnvironmentMap& env, double n, Resolution resolution);

}  // namespace lightdiff
