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

#include "lightdiff/envmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lightdiff/error.hpp"

namespace lightdiff {

namespace {
constexpr double kPi = std::numbers::pi;
}

EnvironmentMap::EnvironmentMap(int width, int height, Rgb fill) : width_(width), height_(height) {
  require(width >= 4 && height >= 2, ErrorCode::kPrecondition, "environment map must be at least 4x2");
  radiance_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

double EnvironmentMap::theta(int row) const { return kPi * (row + 0.5) / height_; }
double EnvironmentMap::phi(int col) const { return 2.0 * kPi * (col + 0.5) / width_; }
double EnvironmentMap::delta_theta() const { return kPi / height_; }
double EnvironmentMap::delta_phi() const { return 2.0 * kPi / width_; }

Vec3 EnvironmentMap::direction(int row, int col) const { return direction_from_angles(theta(row), phi(col)); }

double EnvironmentMap::solid_angle(int row) const { return std::sin(theta(row)) * delta_theta() * delta_phi(); }

void EnvironmentMap::validate() const {
  for (const Rgb& e : radiance_) {
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(e[c]) || e[c] < 0.0) fail(ErrorCode::kPrecondition, "environment radiance must be finite and >= 0");
    }
  }
}

Vec3 direction_from_angles(double theta, double phi) {
  const double st = std::sin(theta);
  return {st * std::cos(phi), std::cos(theta), st * std::sin(phi)};
}

std::vector<double> gini_samples(const EnvironmentMap& env) {
  std::vector<double> x(env.texel_count());
  for (int r = 0; r < env.height(); ++r) {
    const double s = std::sin(env.theta(r));
    for (int c = 0; c < env.width(); ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * env.width() + c;
      x[i] = luminance(env[i]) * s;
    }
  }
  return x;
}

double gini_coefficient(std::span<const double> samples) {
  std::vector<double> x(samples.begin(), samples.end());
  std::stable_sort(x.begin(), x.end());
  const auto k = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x) total += v;
  if (!(total > 0.0)) fail(ErrorCode::kUndefinedGini, "gini of an all-zero sample set");
  // Normalizing first keeps the single-impulse case exact: (k - 1) / k.
  double weighted = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    weighted += (2.0 * static_cast<double>(i + 1) - k - 1.0) * (x[i] / total);
  }
  return std::max(0.0, weighted / k);
}

double gini(const EnvironmentMap& env) {
  const auto x = gini_samples(env);
  return gini_coefficient(x);
}

Rgb mean_radiance(const EnvironmentMap& env) {
  Rgb num;
  double den = 0.0;
  for (int r = 0; r < env.height(); ++r) {
    const double w = env.solid_angle(r);
    Rgb row;
    for (int c = 0; c < env.width(); ++c) row += env.at(r, c);
    num += row * w;
    den += w * env.width();
  }
  return num / den;
}

Vec3 dominant_light_direction(const EnvironmentMap& env) {
  const auto x = gini_samples(env);
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  if (!(sorted.back() > 0.0)) fail(ErrorCode::kPrecondition, "dominant direction of an all-zero map");
  const auto k = sorted.size();
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(k)));
  // Relative slack so rows that are equal up to rounding of sin(theta) tie.
  constexpr double kTie = 1.0 - 1e-12;
  const double threshold = sorted[std::clamp<std::size_t>(rank, 1, k) - 1] * kTie;
  const double top = sorted.back() * kTie;

  Vec3 centroid;
  double weight = 0.0;
  std::size_t argmax = k;
  for (std::size_t i = 0; i < k; ++i) {
    if (argmax == k && x[i] >= top) argmax = i;
    if (x[i] < threshold || x[i] <= 0.0) continue;
    const int r = static_cast<int>(i / env.width());
    const int c = static_cast<int>(i % env.width());
    centroid += env.direction(r, c) * x[i];
    weight += x[i];
  }
  if (length(centroid) <= 1e-9 * weight) {
    return env.direction(static_cast<int>(argmax / env.width()), static_cast<int>(argmax % env.width()));
  }
  return normalize(centroid);
}

DiffusenessReport analyze(const EnvironmentMap& env) {
  return {gini(env), mean_radiance(env), dominant_light_direction(env)};
}

EnvironmentMap diffuse_convolve(const EnvironmentMap& env, double n, int out_height) {
  if (!(n >= 0.0) || !std::isfinite(n)) fail(ErrorCode::kParameter, "cosine exponent must be finite and >= 0");
  require(out_height >= 2, ErrorCode::kParameter, "output height must be >= 2");
  env.validate();

  const std::size_t k = env.texel_count();
  std::vector<Vec3> dirs(k);
  std::vector<double> weight(k);
  for (int r = 0; r < env.height(); ++r) {
    const double s = std::sin(env.theta(r));
    for (int c = 0; c < env.width(); ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * env.width() + c;
      dirs[i] = env.direction(r, c);
      weight[i] = s;
    }
  }

  EnvironmentMap out(2 * out_height, out_height);
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      const Vec3 wo = out.direction(r, c);
      Rgb num;
      double den = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double cosg = dot(wo, dirs[i]);
        if (cosg <= 0.0) continue;
        const double kern = (n == 1.0 ? cosg : std::pow(cosg, n)) * weight[i];
        num += env[i] * kern;
        den += kern;
      }
      if (!(den > 0.0)) fail(ErrorCode::kInternal, "degenerate convolution normalization");
      out.at(r, c) = num / den;
    }
  }
  return out;
}

EnvironmentMap downsample(const EnvironmentMap& env, int factor) {
  require(factor >= 1 && env.width() % factor == 0 && env.height() % factor == 0, ErrorCode::kParameter,
          "downsample factor must divide the map dimensions");
  if (factor == 1) return env;
  EnvironmentMap out(env.width() / factor, env.height() / factor);
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      Rgb num;
      double den = 0.0;
      for (int dr = 0; dr < factor; ++dr) {
        const int sr = r * factor + dr;
        const double w = std::sin(env.theta(sr));
        for (int dc = 0; dc < factor; ++dc) {
          num += env.at(sr, c * factor + dc) * w;
          den += w;
        }
      }
      out.at(r, c) = num / den;
    }
  }
  return out;
}

EnvironmentMap resample_bilinear(const EnvironmentMap& env, int width, int height) {
  EnvironmentMap out(width, height);
  for (int r = 0; r < height; ++r) {
    const double fr = std::clamp(out.theta(r) / kPi * env.height() - 0.5, 0.0, env.height() - 1.0);
    const int r0 = static_cast<int>(fr);
    const int r1 = std::min(r0 + 1, env.height() - 1);
    const double tr = fr - r0;
    for (int c = 0; c < width; ++c) {
      double fc = out.phi(c) / (2.0 * kPi) * env.width() - 0.5;
      const int c0f = static_cast<int>(std::floor(fc));
      const double tc = fc - c0f;
      const int c0 = (c0f % env.width() + env.width()) % env.width();
      const int c1 = (c0 + 1) % env.width();
      out.at(r, c) = (env.at(r0, c0) * (1 - tc) + env.at(r0, c1) * tc) * (1 - tr) +
                     (env.at(r1, c0) * (1 - tc) + env.at(r1, c1) * tc) * tr;
    }
  }
  return out;
}

EnvironmentMap diffuse_convolve_fast(const EnvironmentMap& env, double n, int out_height, int work_height) {
  require(work_height >= 2, ErrorCode::kParameter, "work height must be >= 2");
  EnvironmentMap input = env;
  if (env.height() > work_height) {
    if (env.height() % work_height == 0 && env.width() % (env.height() / work_height) == 0) {
      input = downsample(env, env.height() / work_height);
    } else {
      input = resample_bilinear(env, 2 * work_height, work_height);
    }
  }
  if (out_height <= work_height) return diffuse_convolve(input, n, out_height);
  return resample_bilinear(diffuse_convolve(input, n, work_height), 2 * out_height, out_height);
}

DiffusionParameter diffusion_parameter(double g_source, double g_diffuse, double g_target) {
  if (!(g_source > g_diffuse)) {
    fail(ErrorCode::kDegenerateLighting, "source lighting is already fully diffuse (G_s <= G_d)");
  }
  const double t = (g_target - g_diffuse) / (g_source - g_diffuse);
  if (t < 0.0) return {0.0, true};
  if (t > 1.0) return {1.0, true};
  return {t, false};
}

EnvironmentMap gen_procedural_env(const ProceduralEnvSpec& spec, std::uint64_t seed) {
  require(spec.lobes.size() <= 8, ErrorCode::kPrecondition, "at most 8 lobes");
  require(spec.noise >= 0.0 && spec.noise < 1.0, ErrorCode::kPrecondition, "noise amplitude must be in [0, 1)");
  for (int c = 0; c < 3; ++c) require(spec.ambient[c] >= 0.0, ErrorCode::kPrecondition, "ambient must be >= 0");
  const bool has_ambient = luminance(spec.ambient) > 0.0;
  require(has_ambient || !spec.lobes.empty(), ErrorCode::kPrecondition, "empty lobe list with zero ambient");

  std::vector<Vec3> dirs;
  for (const auto& lobe : spec.lobes) {
    require(lobe.width > 0.0 && lobe.width <= kPi, ErrorCode::kPrecondition, "lobe width must be in (0, pi]");
    require(lobe.intensity > 0.0, ErrorCode::kPrecondition, "lobe intensity must be > 0");
    require(lobe.color.r >= 0.0 && lobe.color.g >= 0.0 && lobe.color.b >= 0.0, ErrorCode::kPrecondition,
            "lobe color must be >= 0");
    require(length(lobe.direction) > 0.0, ErrorCode::kPrecondition, "lobe direction must be nonzero");
    dirs.push_back(normalize(lobe.direction));
  }

  EnvironmentMap env(spec.width, spec.height, spec.ambient);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int r = 0; r < env.height(); ++r) {
    for (int c = 0; c < env.width(); ++c) {
      const Vec3 w = env.direction(r, c);
      Rgb e = spec.ambient;
      for (std::size_t l = 0; l < spec.lobes.size(); ++l) {
        const auto& lobe = spec.lobes[l];
        e += lobe.color * (lobe.intensity * std::exp((dot(w, dirs[l]) - 1.0) / (lobe.width * lobe.width)));
      }
      if (spec.noise > 0.0) e = e * (1.0 + spec.noise * unit(rng));
      env.at(r, c) = e;
    }
  }
  if (std::none_of(env.texels().begin(), env.texels().end(), [](const Rgb& e) { return luminance(e) > 0.0; })) {
    fail(ErrorCode::kPrecondition, "generated map is all zero (lobes underflow on this grid)");
  }
  return env;
}

EnvironmentMap remove_cone(const EnvironmentMap& env, const Vec3& dir, double half_angle) {
  EnvironmentMap out = env;
  const Vec3 d = normalize(dir);
  const double cos_limit = std::cos(half_angle);
  for (int r = 0; r < env.height(); ++r) {
    for (int c = 0; c < env.width(); ++c) {
      if (dot(env.direction(r, c), d) >= cos_limit) out.at(r, c) = {};
    }
  }
  return out;
}

}  // namespace lightdiff
