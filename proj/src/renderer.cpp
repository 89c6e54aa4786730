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

#include "lightdiff/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lightdiff/error.hpp"

namespace lightdiff {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Vec3 kView{0.0, 0.0, 1.0};

double tex_coord(int i, int n) { return -1.0 + 2.0 * (i + 0.5) / n; }

// Smooth value noise on [-1, 1]^2 sampled onto an n x n grid, in [0, 1].
std::vector<double> value_noise(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
  double amp_sum = 0.0;
  for (int cells : {4, 8, 16}) {
    const double amp = 4.0 / cells;
    amp_sum += amp;
    std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
    for (auto& v : lattice) v = u(rng);
    for (int j = 0; j < n; ++j) {
      const double fy = (j + 0.5) / n * cells;
      const int y0 = std::min(static_cast<int>(fy), cells - 1);
      double ty = fy - y0;
      ty = ty * ty * (3 - 2 * ty);
      for (int i = 0; i < n; ++i) {
        const double fx = (i + 0.5) / n * cells;
        const int x0 = std::min(static_cast<int>(fx), cells - 1);
        double tx = fx - x0;
        tx = tx * tx * (3 - 2 * tx);
        auto at = [&](int x, int y) { return lattice[static_cast<std::size_t>(y) * (cells + 1) + x]; };
        const double v = (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
                         ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
        out[static_cast<std::size_t>(j) * n + i] += amp * v;
      }
    }
  }
  for (auto& v : out) v /= amp_sum;
  return out;
}

Rgb clamp01(const Rgb& c) {
  return {std::clamp(c.r, 0.0, 1.0), std::clamp(c.g, 0.0, 1.0), std::clamp(c.b, 0.0, 1.0)};
}

}  // namespace

const char* to_string(GeometryKind kind) { return kind == GeometryKind::kSphere ? "sphere" : "bust"; }

const char* to_string(AlbedoPattern pattern) {
  switch (pattern) {
    case AlbedoPattern::kFlat: return "flat";
    case AlbedoPattern::kTwoTone: return "two-tone";
    case AlbedoPattern::kNoise: return "noise";
  }
  return "flat";
}

GeometryKind parse_geometry(const std::string& s) {
  if (s == "sphere") return GeometryKind::kSphere;
  if (s == "bust") return GeometryKind::kBust;
  fail(ErrorCode::kPrecondition, "unknown geometry kind: " + s);
}

AlbedoPattern parse_albedo_pattern(const std::string& s) {
  if (s == "flat") return AlbedoPattern::kFlat;
  if (s == "two-tone") return AlbedoPattern::kTwoTone;
  if (s == "noise") return AlbedoPattern::kNoise;
  fail(ErrorCode::kPrecondition, "unknown albedo pattern: " + s);
}

void validate(const SceneSpec& spec) {
  auto in01 = [](const Rgb& c) {
    for (int i = 0; i < 3; ++i)
      if (!(c[i] >= 0.0 && c[i] <= 1.0)) return false;
    return true;
  };
  require(in01(spec.skin_albedo) && in01(spec.clothing_albedo), ErrorCode::kPrecondition, "albedo must lie in [0, 1]");
  require(spec.skin_fraction > 0.0 && spec.skin_fraction < 1.0, ErrorCode::kPrecondition, "skin fraction must be in (0, 1)");
  require(spec.noise_amplitude >= 0.0 && spec.noise_amplitude <= 1.0, ErrorCode::kPrecondition,
          "noise amplitude must be in [0, 1]");
  require(spec.specular_strength >= 0.0 && std::isfinite(spec.specular_strength), ErrorCode::kPrecondition,
          "specular strength must be >= 0");
  require(spec.specular_exponent >= 1.0 && std::isfinite(spec.specular_exponent), ErrorCode::kPrecondition,
          "specular exponent must be >= 1");
  if (spec.occluder) {
    const auto& o = *spec.occluder;
    require(o.half_width > 0.0 && o.half_height > 0.0, ErrorCode::kPrecondition, "occluder extents must be positive");
    require(length(o.normal) > 0.0 && length(cross(o.up, o.normal)) > 1e-9, ErrorCode::kPrecondition,
            "occluder frame is degenerate");
  }
}

Scene::Scene(const SceneSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate(spec_);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  if (spec_.geometry == GeometryKind::kBust) {
    // Nose, nose tip, brows, eye sockets, cheeks, lips, chin.
    const Bump features[] = {
        {0.0, 0.02, 0.22, 0.09, 0.20},  {0.0, -0.12, 0.08, 0.07, 0.07},  {-0.28, 0.30, 0.07, 0.16, 0.06},
        {0.28, 0.30, 0.07, 0.16, 0.06}, {-0.30, 0.14, -0.10, 0.12, 0.08}, {0.30, 0.14, -0.10, 0.12, 0.08},
        {-0.42, -0.20, 0.07, 0.16, 0.16}, {0.42, -0.20, 0.07, 0.16, 0.16}, {0.0, -0.38, 0.05, 0.14, 0.05},
        {0.0, -0.65, 0.08, 0.18, 0.10},
    };
    for (Bump b : features) {
      b.cx += 0.03 * jitter(rng);
      b.cy += 0.03 * jitter(rng);
      b.amp *= 1.0 + 0.15 * jitter(rng);
      bumps_.push_back(b);
    }
    const int n = kHeightGridSize;
    height_grid_.assign(static_cast<std::size_t>(n) * n, 0.0f);
    max_height_ = 0.0;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double x = -1.0 + 2.0 * i / (n - 1);
        const double y = -1.0 + 2.0 * j / (n - 1);
        const double h = bust_height(x, y, nullptr, nullptr);
        height_grid_[static_cast<std::size_t>(j) * n + i] = static_cast<float>(h);
        max_height_ = std::max(max_height_, h);
      }
    }
  }

  const int n = kTextureSize;
  albedo_.assign(static_cast<std::size_t>(n) * n, spec_.skin_albedo);
  skin_.assign(static_cast<std::size_t>(n) * n, 1);
  if (spec_.albedo == AlbedoPattern::kNoise) {
    const auto noise = value_noise(n, rng);
    for (std::size_t i = 0; i < albedo_.size(); ++i) {
      albedo_[i] = clamp01(spec_.skin_albedo * (1.0 + spec_.noise_amplitude * (2.0 * noise[i] - 1.0)));
    }
  } else if (spec_.albedo == AlbedoPattern::kTwoTone) {
    // Skin above a horizontal cut placed at the requested quantile of surface samples.
    std::vector<double> ys;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        if (texel_on_surface(i, j)) ys.push_back(-tex_coord(j, n));
    std::sort(ys.begin(), ys.end());
    const auto cut_index = static_cast<std::size_t>((1.0 - spec_.skin_fraction) * static_cast<double>(ys.size()));
    const double cut = ys[std::min(cut_index, ys.size() - 1)];
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const bool skin = -tex_coord(j, n) >= cut;
        const std::size_t k = static_cast<std::size_t>(j) * n + i;
        skin_[k] = skin ? 1 : 0;
        albedo_[k] = skin ? spec_.skin_albedo : spec_.clothing_albedo;
      }
    }
  }
}

bool Scene::texel_on_surface(int i, int j) const {
  const double x = tex_coord(i, kTextureSize);
  const double y = -tex_coord(j, kTextureSize);
  return x * x + y * y < 1.0;
}

std::pair<int, int> Scene::texel(double x, double y) const {
  const int n = kTextureSize;
  const int i = std::clamp(static_cast<int>((x + 1.0) * 0.5 * n), 0, n - 1);
  const int j = std::clamp(static_cast<int>((1.0 - y) * 0.5 * n), 0, n - 1);
  return {i, j};
}

Rgb Scene::albedo_at(double x, double y) const {
  const auto [i, j] = texel(x, y);
  return albedo_[static_cast<std::size_t>(j) * kTextureSize + i];
}

bool Scene::skin_at(double x, double y) const {
  const auto [i, j] = texel(x, y);
  return skin_[static_cast<std::size_t>(j) * kTextureSize + i] != 0;
}

double Scene::bust_height(double x, double y, double* dhdx, double* dhdy) const {
  const double r2 = x * x + y * y;
  if (r2 >= 1.0) {
    if (dhdx) *dhdx = *dhdy = 0.0;
    return 0.0;
  }
  constexpr double kDome = 0.75;
  const double s = std::sqrt(std::max(1.0 - r2, 1e-6));
  const double taper = (1.0 - r2) * (1.0 - r2);
  double bumps = 0.0, bx = 0.0, by = 0.0;
  for (const Bump& b : bumps_) {
    const double dx = x - b.cx;
    const double dy = y - b.cy;
    const double v = b.amp * std::exp(-0.5 * (dx * dx / (b.sx * b.sx) + dy * dy / (b.sy * b.sy)));
    bumps += v;
    bx -= v * dx / (b.sx * b.sx);
    by -= v * dy / (b.sy * b.sy);
  }
  if (dhdx) {
    const double dtaper = -4.0 * (1.0 - r2);
    *dhdx = -kDome * x / s + dtaper * x * bumps + taper * bx;
    *dhdy = -kDome * y / s + dtaper * y * bumps + taper * by;
  }
  return kDome * s + taper * bumps;
}

double Scene::grid_height(double x, double y) const {
  const int n = kHeightGridSize;
  const double fx = (x + 1.0) * 0.5 * (n - 1);
  const double fy = (y + 1.0) * 0.5 * (n - 1);
  const int i0 = std::clamp(static_cast<int>(fx), 0, n - 2);
  const int j0 = std::clamp(static_cast<int>(fy), 0, n - 2);
  const double tx = fx - i0;
  const double ty = fy - j0;
  auto at = [&](int i, int j) { return static_cast<double>(height_grid_[static_cast<std::size_t>(j) * n + i]); };
  return (1 - ty) * ((1 - tx) * at(i0, j0) + tx * at(i0 + 1, j0)) + ty * ((1 - tx) * at(i0, j0 + 1) + tx * at(i0 + 1, j0 + 1));
}

std::optional<SurfacePoint> Scene::intersect_camera_ray(double x, double y) const {
  const double r2 = x * x + y * y;
  if (r2 >= 1.0) return std::nullopt;
  if (spec_.geometry == GeometryKind::kSphere) {
    const Vec3 p{x, y, std::sqrt(1.0 - r2)};
    return SurfacePoint{p, normalize(p)};
  }
  double hx = 0.0, hy = 0.0;
  const double h = bust_height(x, y, &hx, &hy);
  if (h <= 0.0) return std::nullopt;
  return SurfacePoint{{x, y, h}, normalize(Vec3{-hx, -hy, 1.0})};
}

bool Scene::occluder_blocks(const Vec3& p, const Vec3& dir) const {
  if (!spec_.occluder) return false;
  const OccluderSpec& o = *spec_.occluder;
  const Vec3 n = normalize(o.normal);
  const double denom = dot(dir, n);
  if (std::abs(denom) < 1e-12) return false;
  const double s = dot(o.center - p, n) / denom;
  if (s <= 0.0) return false;
  const Vec3 q = p + dir * s - o.center;
  const Vec3 right = normalize(cross(o.up, n));
  const Vec3 up = cross(n, right);
  return std::abs(dot(q, right)) <= o.half_width && std::abs(dot(q, up)) <= o.half_height;
}

bool Scene::self_occluded(const SurfacePoint& p, const Vec3& dir) const {
  if (spec_.geometry == GeometryKind::kSphere) return false;  // convex
  constexpr double kOffset = 0.01;
  constexpr double kStep = 0.015;
  const Vec3 start = p.position + p.normal * kOffset;
  for (double s = kStep; s < 4.0; s += kStep) {
    const Vec3 q = start + dir * s;
    if (std::abs(q.x) > 1.0 || std::abs(q.y) > 1.0) return false;
    if ((q.z > max_height_ && dir.z >= 0.0) || (q.z < -max_height_ && dir.z <= 0.0)) return false;
    if (q.x * q.x + q.y * q.y < 1.0 && std::abs(q.z) < grid_height(q.x, q.y)) return true;
  }
  return false;
}

bool Scene::occluded(const SurfacePoint& p, const Vec3& dir) const {
  return occluder_blocks(p.position, dir) || self_occluded(p, dir);
}

Scene build_scene(const SceneSpec& spec, std::uint64_t seed) { return Scene(spec, seed); }

Renderer::Renderer(Scene scene, Resolution resolution, RenderOptions options)
    : scene_(std::move(scene)), resolution_(resolution), options_(options) {
  require(resolution.width > 0 && resolution.height > 0, ErrorCode::kPrecondition, "resolution must be positive");
  require(options.env_height >= 2, ErrorCode::kPrecondition, "integration height must be >= 2");
  const int w = resolution.width;
  const int h = resolution.height;
  samples_.resize(static_cast<std::size_t>(w) * h);
  const double scale = 2.0 * options_.frame_extent / h;
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const double x = (px + 0.5 - 0.5 * w) * scale;
      const double y = (0.5 * h - py - 0.5) * scale;
      PixelSample& s = samples_[static_cast<std::size_t>(py) * w + px];
      if (auto hit = scene_.intersect_camera_ray(x, y)) {
        s.covered = true;
        s.surface = *hit;
        s.albedo = scene_.albedo_at(x, y);
        s.skin = scene_.skin_at(x, y);
      }
    }
  }
}

ImageBuffer Renderer::render_olat(const Vec3& light_dir, const Rgb& light_rgb) const {
  require(is_unit(light_dir), ErrorCode::kPrecondition, "light direction must be a unit vector");
  const double ks = scene_.spec().specular_strength;
  const double exponent = scene_.spec().specular_exponent;
  ImageBuffer img(resolution_.width, resolution_.height);
  for (int py = 0; py < resolution_.height; ++py) {
    for (int px = 0; px < resolution_.width; ++px) {
      const PixelSample& s = samples_[static_cast<std::size_t>(py) * resolution_.width + px];
      if (!s.covered) continue;
      img.alpha(px, py) = 1.0f;
      const double cosl = dot(s.surface.normal, light_dir);
      if (cosl <= 0.0 || scene_.occluded(s.surface, light_dir)) continue;
      const double spec = ks > 0.0 ? ks * std::pow(std::max(0.0, dot(reflect(kView, s.surface.normal), light_dir)), exponent) : 0.0;
      img.set_rgb(px, py, (s.albedo * (cosl / kPi) + Rgb::gray(spec)) * light_rgb);
    }
  }
  return img;
}

const OlatBasis& Renderer::basis(int env_width, int env_height) const {
  std::lock_guard lock(cache_mutex_);
  auto& slot = cache_[{env_width, env_height}];
  if (slot) return *slot;

  auto b = std::make_shared<OlatBasis>();
  const EnvironmentMap grid(env_width, env_height);
  b->env_width = env_width;
  b->env_height = env_height;
  for (int r = 0; r < env_height; ++r) {
    for (int c = 0; c < env_width; ++c) {
      b->directions.push_back(grid.direction(r, c));
      b->texel_weight.push_back(grid.solid_angle(r));
    }
  }
  const std::size_t k = b->directions.size();
  b->diffuse.assign(samples_.size() * k, 0.0f);
  b->specular.assign(samples_.size() * k, 0.0f);
  const double ks = scene_.spec().specular_strength;
  const double exponent = scene_.spec().specular_exponent;
  for (std::size_t p = 0; p < samples_.size(); ++p) {
    const PixelSample& s = samples_[p];
    if (!s.covered) continue;
    const Vec3 refl = reflect(kView, s.surface.normal);
    for (std::size_t i = 0; i < k; ++i) {
      const Vec3& w = b->directions[i];
      const double cosl = dot(s.surface.normal, w);
      if (cosl <= 0.0 || scene_.occluded(s.surface, w)) continue;
      b->diffuse[p * k + i] = static_cast<float>(cosl / kPi);
      if (ks > 0.0) b->specular[p * k + i] = static_cast<float>(ks * std::pow(std::max(0.0, dot(refl, w)), exponent));
    }
  }
  slot = std::move(b);
  return *slot;
}

EnvironmentMap Renderer::integration_map(const EnvironmentMap& env) const {
  const int target = options_.env_height;
  if (env.height() <= target) return env;
  const int factor = env.height() / target;
  if (env.height() % target == 0 && env.width() % factor == 0) return downsample(env, factor);
  return resample_bilinear(env, 2 * target, target);
}

RenderBundle Renderer::render_env(const EnvironmentMap& env) const {
  env.validate();
  const EnvironmentMap grid = integration_map(env);
  const OlatBasis& b = basis(grid.width(), grid.height());
  const std::size_t k = b.directions.size();
  std::vector<Rgb> light(k);
  for (std::size_t i = 0; i < k; ++i) light[i] = grid[i] * b.texel_weight[i];

  RenderBundle out;
  out.image = ImageBuffer(resolution_.width, resolution_.height);
  out.albedo_gt = albedo_image();
  out.skin_mask = skin_mask();
  out.normals.assign(samples_.size(), Vec3{});
  for (std::size_t p = 0; p < samples_.size(); ++p) {
    const PixelSample& s = samples_[p];
    if (!s.covered) continue;
    out.normals[p] = s.surface.normal;
    Rgb irradiance, spec;
    const float* dw = &b.diffuse[p * k];
    const float* sw = &b.specular[p * k];
    for (std::size_t i = 0; i < k; ++i) {
      if (dw[i] == 0.0f) continue;
      irradiance += light[i] * static_cast<double>(dw[i]);
      spec += light[i] * static_cast<double>(sw[i]);
    }
    const int px = static_cast<int>(p % resolution_.width);
    const int py = static_cast<int>(p / resolution_.width);
    out.image.set_rgb(px, py, s.albedo * irradiance + spec);
    out.image.alpha(px, py) = 1.0f;
  }
  return out;
}

ImageBuffer Renderer::render_diffused(const EnvironmentMap& env, double n) const {
  const EnvironmentMap grid = integration_map(env);
  return render_env(diffuse_convolve(grid, n, grid.height())).image;
}

GrayImage Renderer::alpha() const {
  GrayImage a(resolution_.width, resolution_.height);
  for (std::size_t p = 0; p < samples_.size(); ++p) a[p] = samples_[p].covered ? 1.0f : 0.0f;
  return a;
}

ImageBuffer Renderer::albedo_image() const {
  ImageBuffer img(resolution_.width, resolution_.height);
  for (std::size_t p = 0; p < samples_.size(); ++p) {
    if (!samples_[p].covered) continue;
    const int px = static_cast<int>(p % resolution_.width);
    const int py = static_cast<int>(p / resolution_.width);
    img.set_rgb(px, py, samples_[p].albedo);
    img.alpha(px, py) = 1.0f;
  }
  return img;
}

GrayImage Renderer::skin_mask() const {
  GrayImage m(resolution_.width, resolution_.height);
  for (std::size_t p = 0; p < samples_.size(); ++p) m[p] = samples_[p].covered && samples_[p].skin ? 1.0f : 0.0f;
  return m;
}

ImageBuffer render_olat(const Scene& scene, const Vec3& light_dir, const Rgb& light_rgb, Resolution resolution) {
  return Renderer(scene, resolution).render_olat(light_dir, light_rgb);
}

RenderBundle render_env(const Scene& scene, const EnvironmentMap& env, Resolution resolution) {
  return Renderer(scene, resolution).render_env(env);
}

ImageBuffer render_diffused(const Scene& scene, const EnvironmentMap& env, double n, Resolution resolution) {
  require(n >= 0.0, ErrorCode::kParameter, "cosine exponent must be >= 0");
  return Renderer(scene, resolution).render_diffused(env, n);
}

}  // namespace lightdiff
