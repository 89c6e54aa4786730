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
#include <numbers>
#include <random>

#include "lightdiff/envmap.hpp"

namespace fixtures {

// Random procedural lighting: ambient plus 1-3 colored lobes.
inline lightdiff::EnvironmentMap random_lobe_env(std::uint64_t seed, int height = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  lightdiff::ProceduralEnvSpec spec;
  spec.height = height;
  spec.width = 2 * height;
  spec.ambient = lightdiff::Rgb{0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng), 0.05 + 0.2 * u(rng)};
  const int lobes = 1 + static_cast<int>(u(rng) * 3.0);
  for (int l = 0; l < lobes; ++l) {
    const double theta = std::acos(1.0 - 2.0 * u(rng));
    const double phi = 2.0 * std::numbers::pi * u(rng);
    lightdiff::LightLobe lobe;
    lobe.direction = lightdiff::direction_from_angles(theta, phi);
    lobe.width = 0.1 + 0.5 * u(rng);
    lobe.intensity = 1.0 + 20.0 * u(rng);
    lobe.color = {0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng)};
    spec.lobes.push_back(lobe);
  }
  return lightdiff::gen_procedural_env(spec, seed);
}

// Independent uniform texel values in [0, 1).
inline lightdiff::EnvironmentMap random_noise_env(std::uint64_t seed, int height = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  lightdiff::EnvironmentMap env(2 * height, height);
  for (auto& e : env.texels()) e = {u(rng), u(rng), u(rng)};
  return env;
}

}  // namespace fixtures
