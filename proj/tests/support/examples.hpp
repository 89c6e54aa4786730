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

#include "lightdiff/maps.hpp"
#include "lightdiff/model.hpp"
#include "lightdiff/renderer.hpp"
#include "support/fixtures.hpp"

namespace fixtures {

// Rendered training example without augmentation; target is the render under
// the map convolved with exponent n.
inline lightdiff::TrainingExample rendered_example(std::uint64_t seed, int size, double t, double n) {
  using namespace lightdiff;
  SceneSpec spec;
  spec.geometry = seed % 2 ? GeometryKind::kBust : GeometryKind::kSphere;
  spec.albedo = AlbedoPattern::kTwoTone;
  spec.skin_albedo = Rgb{0.6, 0.45, 0.36};
  spec.specular_strength = 0.2;
  const Renderer r(build_scene(spec, seed), {size, size});
  const auto env = random_lobe_env(seed);
  const auto bundle = r.render_env(env);
  const auto diffuse = r.render_diffused(env, 1.0);
  const auto alpha = bundle.image.alpha_image();
  const auto maps = compute_spec_shadow(bundle.image, diffuse, alpha);
  TrainingExample e;
  e.input = bundle.image;
  e.specular = maps.specular;
  e.shadow = maps.shadow;
  e.target = r.render_diffused(env, n);
  e.t = t;
  const Rgb mean = mean_radiance(env);
  e.tinted_albedo = bundle.albedo_gt;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) e.tinted_albedo.set_rgb(x, y, bundle.albedo_gt.rgb(x, y) * mean);
  e.tint = mean * (1.0 / luminance(mean));
  e.albedo = bundle.albedo_gt;
  e.skin_mask = bundle.skin_mask;
  return e;
}

}  // namespace fixtures
