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

#include "lightdiff/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>
#include <variant>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lightdiff/error.hpp"
#include "lightdiff/imageio.hpp"
#include "lightdiff/keyvalue.hpp"
#include "lightdiff/maps.hpp"

namespace lightdiff {

using nlohmann::json;

namespace {

// ------------------------------------------------------------ config fields

using FieldPtr = std::variant<int DatasetConfig::*, double DatasetConfig::*>;

const std::vector<std::pair<std::string, FieldPtr>>& dataset_fields() {
  static const std::vector<std::pair<std::string, FieldPtr>> fields = {
      {"train_count", &DatasetConfig::train_count},
      {"eval_count", &DatasetConfig::eval_count},
      {"width", &DatasetConfig::width},
      {"height", &DatasetConfig::height},
      {"aug_probability", &DatasetConfig::aug_probability},
      {"tint_probability", &DatasetConfig::tint_probability},
      {"bust_probability", &DatasetConfig::bust_probability},
      {"exposure", &DatasetConfig::exposure},
      {"env_height", &DatasetConfig::env_height},
      {"min_lobes", &DatasetConfig::min_lobes},
      {"max_lobes", &DatasetConfig::max_lobes},
      {"ambient_min", &DatasetConfig::ambient_min},
      {"ambient_max", &DatasetConfig::ambient_max},
      {"max_env_attempts", &DatasetConfig::max_env_attempts},
      {"threads", &DatasetConfig::threads},
  };
  return fields;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ------------------------------------------------------------ json helpers

json to_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }
json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Rgb rgb_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
Vec3 vec_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json scene_json(const SceneSpec& s) {
  json j;
  j["geometry"] = to_string(s.geometry);
  j["albedo"] = to_string(s.albedo);
  j["skin_albedo"] = to_json(s.skin_albedo);
  j["clothing_albedo"] = to_json(s.clothing_albedo);
  j["skin_fraction"] = s.skin_fraction;
  j["noise_amplitude"] = s.noise_amplitude;
  j["specular_strength"] = s.specular_strength;
  j["specular_exponent"] = s.specular_exponent;
  if (s.occluder) {
    const auto& o = *s.occluder;
    j["occluder"] = {{"center", to_json(o.center)},
                     {"normal", to_json(o.normal)},
                     {"up", to_json(o.up)},
                     {"half_width", o.half_width},
                     {"half_height", o.half_height}};
  }
  return j;
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  if (j.contains("geometry")) s.geometry = parse_geometry(j["geometry"].get<std::string>());
  if (j.contains("albedo")) s.albedo = parse_albedo_pattern(j["albedo"].get<std::string>());
  if (j.contains("skin_albedo")) s.skin_albedo = rgb_from_json(j["skin_albedo"]);
  if (j.contains("clothing_albedo")) s.clothing_albedo = rgb_from_json(j["clothing_albedo"]);
  s.skin_fraction = j.value("skin_fraction", s.skin_fraction);
  s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
  s.specular_strength = j.value("specular_strength", s.specular_strength);
  s.specular_exponent = j.value("specular_exponent", s.specular_exponent);
  if (j.contains("occluder")) {
    const auto& o = j["occluder"];
    OccluderSpec occ;
    if (o.contains("center")) occ.center = vec_from_json(o["center"]);
    if (o.contains("normal")) occ.normal = vec_from_json(o["normal"]);
    if (o.contains("up")) occ.up = vec_from_json(o["up"]);
    occ.half_width = o.value("half_width", occ.half_width);
    occ.half_height = o.value("half_height", occ.half_height);
    s.occluder = occ;
  }
  validate(s);
  return s;
}

json env_json(const ProceduralEnvSpec& s) {
  json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["ambient"] = to_json(s.ambient);
  j["noise"] = s.noise;
  j["lobes"] = json::array();
  for (const auto& l : s.lobes)
    j["lobes"].push_back(
        {{"direction", to_json(l.direction)}, {"width", l.width}, {"intensity", l.intensity}, {"color", to_json(l.color)}});
  return j;
}

ProceduralEnvSpec env_from_json(const json& j) {
  ProceduralEnvSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  if (j.contains("ambient")) s.ambient = rgb_from_json(j["ambient"]);
  s.noise = j.value("noise", s.noise);
  if (j.contains("lobes"))
    for (const auto& l : j["lobes"]) {
      LightLobe lobe;
      if (l.contains("direction")) lobe.direction = vec_from_json(l["direction"]);
      lobe.width = l.value("width", lobe.width);
      lobe.intensity = l.value("intensity", lobe.intensity);
      if (l.contains("color")) lobe.color = rgb_from_json(l["color"]);
      s.lobes.push_back(lobe);
    }
  return s;
}

template <class F>
auto json_guard(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed JSON: ") + e.what());
  }
}

// ------------------------------------------------------------ sampling

constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kEnvStream = 2;
constexpr std::uint64_t kAugStream = 3;
constexpr std::uint64_t kTStream = 4;
constexpr double kMaxExponent = 4096.0;

std::uint64_t example_seed(std::uint64_t seed, Split split, int index) {
  return kv::derive_seed(seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index));
}

SceneSpec sample_scene(const DatasetConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSpec s;
  s.geometry = u(rng) < config.bust_probability ? GeometryKind::kBust : GeometryKind::kSphere;
  const double pattern = u(rng);
  s.albedo = pattern < 0.6 ? AlbedoPattern::kTwoTone : (pattern < 0.8 ? AlbedoPattern::kNoise : AlbedoPattern::kFlat);
  const double b = 0.3 + 0.5 * u(rng);
  const Rgb base{1.0, 0.75, 0.6};
  for (int c = 0; c < 3; ++c) {
    const double v = b * base[c] * (1.0 + 0.03 * (2.0 * u(rng) - 1.0));
    (c == 0 ? s.skin_albedo.r : c == 1 ? s.skin_albedo.g : s.skin_albedo.b) = std::clamp(v, 0.0, 1.0);
  }
  s.clothing_albedo = {0.05 + 0.75 * u(rng), 0.05 + 0.75 * u(rng), 0.05 + 0.75 * u(rng)};
  s.skin_fraction = 0.3 + 0.3 * u(rng);
  s.noise_amplitude = 0.1 + 0.2 * u(rng);
  s.specular_strength = 0.4 * u(rng);
  s.specular_exponent = 8.0 + 56.0 * u(rng);
  return s;
}

constexpr double kKeyCapDeg = 70.0;

ProceduralEnvSpec sample_env(const DatasetConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProceduralEnvSpec s;
  s.height = config.env_height;
  s.width = 2 * config.env_height;
  const double span = config.ambient_max - config.ambient_min;
  s.ambient = {config.ambient_min + span * u(rng), config.ambient_min + span * u(rng),
               config.ambient_min + span * u(rng)};
  std::uniform_int_distribution<int> count(config.min_lobes, config.max_lobes);
  const int lobes = count(rng);
  for (int l = 0; l < lobes; ++l) {
    LightLobe lobe;
    if (l == 0) {
      // Key light: uniform over the cap within kKeyCapDeg of the view axis.
      const double cos_cap = std::cos(kKeyCapDeg * std::numbers::pi / 180.0);
      const double cz = 1.0 - (1.0 - cos_cap) * u(rng);
      const double phi = 2.0 * std::numbers::pi * u(rng);
      const double r = std::sqrt(std::max(0.0, 1.0 - cz * cz));
      lobe.direction = {r * std::cos(phi), r * std::sin(phi), cz};
      lobe.width = 0.05 + 0.2 * u(rng);
      lobe.intensity = 10.0 + 15.0 * u(rng);
    } else {
      const double theta = std::acos(1.0 - 2.0 * u(rng));
      const double phi = 2.0 * std::numbers::pi * u(rng);
      lobe.direction = direction_from_angles(theta, phi);
      lobe.width = 0.1 + 0.5 * u(rng);
      lobe.intensity = 1.0 + 20.0 * u(rng);
    }
    lobe.color = {0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng)};
    s.lobes.push_back(lobe);
  }
  s.noise = 0.2 * u(rng);
  return s;
}

EnvironmentMap scaled(EnvironmentMap env, double scale) {
  for (auto& t : env.texels()) t = t * scale;
  return env;
}

double mean_subject_luminance(const ImageBuffer& img) {
  double sum = 0.0;
  double count = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.alpha(x, y) > 0.0f) {
        const Rgb c = img.rgb(x, y);
        sum += luminance_unchecked(c.r, c.g, c.b);
        count += 1.0;
      }
  return count > 0.0 ? sum / count : 0.0;
}

ImageBuffer times(const ImageBuffer& img, const Rgb& c) {
  ImageBuffer out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.set_rgb(x, y, img.rgb(x, y) * c);
  return out;
}

ExampleBuffers realize(const ExampleRecord& record, const Renderer& renderer) {
  const EnvironmentMap env = record_environment(record);
  const RenderBundle bundle = renderer.render_env(env);
  ExampleBuffers b;
  b.image_clean = bundle.image;
  b.alpha = bundle.image.alpha_image();
  b.skin = bundle.skin_mask;
  b.albedo = bundle.albedo_gt;
  b.albedo.set_alpha(b.alpha);
  b.diffuse = renderer.render_diffused(env, 1.0);
  b.maps_clean = compute_spec_shadow(b.image_clean, b.diffuse, b.alpha);
  if (record.augmentation) {
    const auto& a = *record.augmentation;
    const auto sil = sample_silhouette(a.silhouette, a.silhouette_seed);
    const auto mask = project_shadow_mask(renderer, sil, a.light_direction);
    ShadowAugParams params;
    params.cone_half_angle_deg = a.cone_half_angle_deg;
    const auto ext = apply_external_shadow(renderer, bundle, env, mask, a.gini, params);
    b.image = a.tint ? subsurface_tint(ext.image, ext.blurred_mask, b.skin) : ext.image;
    b.maps = compute_spec_shadow(b.image, b.diffuse, b.alpha);
  } else {
    b.image = b.image_clean;
    b.maps = b.maps_clean;
  }
  b.target = record.n ? renderer.render_diffused(env, *record.n) : b.image_clean;
  b.tinted_albedo = times(b.albedo, mean_radiance(env));
  return b;
}

const std::vector<std::string>& buffer_names() {
  static const std::vector<std::string> names = {"image", "image_clean", "alpha", "skin",
                                                 "albedo", "tinted_albedo", "diffuse", "target",
                                                 "spec", "shadow", "spec_clean", "shadow_clean"};
  return names;
}

std::string record_dir(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return std::string(to_string(split)) + "/" + buf;
}

}  // namespace

// ------------------------------------------------------------ config

void DatasetConfig::validate() const {
  if (train_count < 0 || eval_count < 0 || train_count + eval_count == 0)
    fail(ErrorCode::kParameter, "dataset needs a positive example count");
  if (width < 8 || height < 8) fail(ErrorCode::kParameter, "resolution must be at least 8x8");
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(aug_probability) || !prob(tint_probability) || !prob(bust_probability))
    fail(ErrorCode::kParameter, "probabilities must lie in [0, 1]");
  if (!(exposure > 0.0 && std::isfinite(exposure))) fail(ErrorCode::kParameter, "exposure must be positive");
  if (env_height < 2) fail(ErrorCode::kParameter, "env_height must be >= 2");
  if (min_lobes < 0 || max_lobes < min_lobes) fail(ErrorCode::kParameter, "need 0 <= min_lobes <= max_lobes");
  if (!(ambient_min >= 0.0 && ambient_max >= ambient_min)) fail(ErrorCode::kParameter, "need 0 <= ambient_min <= ambient_max");
  if (max_env_attempts < 1) fail(ErrorCode::kParameter, "max_env_attempts must be >= 1");
  if (threads < 0) fail(ErrorCode::kParameter, "threads must be >= 0");
}

DatasetConfig parse_dataset_config(const std::string& text) {
  DatasetConfig c;
  for (const auto& [k, v] : kv::parse(text)) {
    const auto& fields = dataset_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == k; });
    if (it == fields.end()) fail(ErrorCode::kParameter, "unknown dataset key '" + k + "'");
    std::visit(
        [&](auto field) {
          using T = std::remove_reference_t<decltype(c.*field)>;
          c.*field = kv::number<T>(k, v);
        },
        it->second);
  }
  c.validate();
  return c;
}

DatasetConfig read_dataset_config(const std::filesystem::path& path) { return parse_dataset_config(kv::read_file(path)); }

std::string format_dataset_config(const DatasetConfig& config) {
  std::string out;
  for (const auto& [k, f] : dataset_fields()) {
    out += k + " = ";
    std::visit(
        [&](auto field) {
          if constexpr (std::is_same_v<std::remove_cvref_t<decltype(config.*field)>, int>)
            out += std::to_string(config.*field);
          else
            out += format_double(config.*field);
        },
        f);
    out += "\n";
  }
  return out;
}

const char* to_string(Split split) { return split == Split::kTrain ? "train" : "eval"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "eval") return Split::kEval;
  fail(ErrorCode::kParameter, "unknown split '" + s + "'");
}

// ------------------------------------------------------------ examples

EnvironmentMap record_environment(const ExampleRecord& record) {
  return scaled(gen_procedural_env(record.env, record.env_seed), record.exposure_scale);
}

std::optional<double> exponent_for_gini(const EnvironmentMap& grid, double g_target) {
  auto g_of = [&](double log_n) { return gini(diffuse_convolve(grid, std::exp(log_n), grid.height())); };
  double lo = 0.0;
  double hi = std::log(kMaxExponent);
  if (g_of(hi) <= g_target) return std::nullopt;
  if (g_of(lo) >= g_target) return 1.0;
  for (int i = 0; i < 30; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g_of(mid) < g_target ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

ExampleRecord sample_example(const DatasetConfig& config, std::uint64_t seed, Split split, int index,
                             ExampleBuffers* buffers) {
  config.validate();
  const std::uint64_t base = example_seed(seed, split, index);
  ExampleRecord r;
  r.split = split;
  r.index = index;
  r.id = record_dir(split, index);

  std::mt19937_64 scene_rng(kv::derive_seed(base, kSceneStream));
  r.scene = sample_scene(config, scene_rng);
  r.scene_seed = scene_rng();
  RenderOptions options;
  options.env_height = config.env_height;
  const Renderer renderer(build_scene(r.scene, r.scene_seed), {config.width, config.height}, options);

  EnvironmentMap env;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= config.max_env_attempts)
      fail(ErrorCode::kDegenerateLighting, "no usable lighting for " + r.id + " after " +
                                               std::to_string(config.max_env_attempts) + " attempts");
    std::mt19937_64 env_rng(kv::derive_seed(base, kEnvStream, static_cast<std::uint64_t>(attempt)));
    r.env = sample_env(config, env_rng);
    r.env_seed = env_rng();
    r.env_attempts = attempt + 1;
    try {
      const bool dark = r.env.ambient == Rgb{} &&
                        std::all_of(r.env.lobes.begin(), r.env.lobes.end(), [](const LightLobe& l) { return l.intensity <= 0.0; });
      if (dark) fail(ErrorCode::kDegenerateLighting, "all-zero lighting");
      const EnvironmentMap raw = gen_procedural_env(r.env, r.env_seed);
      const double lum = mean_subject_luminance(renderer.render_env(raw).image);
      if (!(lum > 1e-8)) fail(ErrorCode::kDegenerateLighting, "subject is unlit");
      r.exposure_scale = config.exposure / lum;
      env = scaled(raw, r.exposure_scale);
      const EnvironmentMap grid = renderer.integration_map(env);
      r.gini_source = gini(grid);
      r.gini_diffuse = gini(diffuse_convolve(grid, 1.0, grid.height()));
      diffusion_parameter(r.gini_source, r.gini_diffuse, r.gini_source);
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateLighting && e.code() != ErrorCode::kUndefinedGini) throw;
      spdlog::warn("{}: lighting attempt {} rejected ({}), redrawing", r.id, attempt + 1, e.what());
    }
  }

  std::mt19937_64 aug_rng(kv::derive_seed(base, kAugStream));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(aug_rng) < config.aug_probability) {
    AugmentationRecord a;
    a.silhouette = static_cast<SilhouetteKind>(std::uniform_int_distribution<int>(0, 2)(aug_rng));
    a.silhouette_seed = aug_rng();
    a.light_direction = dominant_light_direction(env);
    a.gini = std::clamp(r.gini_source, 0.0, 1.0);
    a.tint = u(aug_rng) < config.tint_probability;
    r.augmentation = a;
  }

  std::mt19937_64 t_rng(kv::derive_seed(base, kTStream));
  r.t = u(t_rng);
  const EnvironmentMap grid = renderer.integration_map(env);
  const double g_target = r.gini_diffuse + r.t * (r.gini_source - r.gini_diffuse);
  r.n = r.t >= 1.0 ? std::nullopt : exponent_for_gini(grid, g_target);
  r.gini_target = r.n ? gini(diffuse_convolve(grid, *r.n, grid.height())) : r.gini_source;

  const Rgb mean = mean_radiance(env);
  r.tint = mean * (1.0 / luminance(mean));

  ExampleBuffers b = realize(r, renderer);
  if (r.augmentation) {
    // Recorded for inspection; both follow from the stored parameters.
    r.augmentation->sigma = ShadowAugParams{}.sigma_max_fraction * config.width * (1.0 - r.augmentation->gini);
    r.augmentation->opacity =
        ShadowAugParams{}.opacity_min + (ShadowAugParams{}.opacity_max - ShadowAugParams{}.opacity_min) * r.augmentation->gini;
  }
  for (const auto& name : buffer_names()) r.files[name] = r.id + "/" + name + ".pfm";
  if (buffers) *buffers = std::move(b);
  return r;
}

ExampleBuffers realize_example(const ExampleRecord& record, Resolution resolution, int env_height) {
  RenderOptions options;
  options.env_height = env_height;
  const Renderer renderer(build_scene(record.scene, record.scene_seed), resolution, options);
  return realize(record, renderer);
}

void write_example_files(const std::filesystem::path& root, const ExampleRecord& record, const ExampleBuffers& b) {
  auto path = [&](const std::string& name) {
    const auto it = record.files.find(name);
    if (it == record.files.end()) fail(ErrorCode::kFormat, record.id + " has no file for " + name);
    const auto p = root / it->second;
    std::filesystem::create_directories(p.parent_path());
    return p;
  };
  io::write_pfm(path("image"), b.image);
  io::write_pfm(path("image_clean"), b.image_clean);
  io::write_pfm(path("alpha"), b.alpha);
  io::write_pfm(path("skin"), b.skin);
  io::write_pfm(path("albedo"), b.albedo);
  io::write_pfm(path("tinted_albedo"), b.tinted_albedo);
  io::write_pfm(path("diffuse"), b.diffuse);
  io::write_pfm(path("target"), b.target);
  io::write_pfm(path("spec"), b.maps.specular);
  io::write_pfm(path("shadow"), b.maps.shadow);
  io::write_pfm(path("spec_clean"), b.maps_clean.specular);
  io::write_pfm(path("shadow_clean"), b.maps_clean.shadow);
}

ExampleBuffers read_example_files(const std::filesystem::path& root, const ExampleRecord& record) {
  auto path = [&](const std::string& name) {
    const auto it = record.files.find(name);
    if (it == record.files.end()) fail(ErrorCode::kFormat, record.id + " has no file for " + name);
    return root / it->second;
  };
  ExampleBuffers b;
  b.alpha = io::read_gray_pfm(path("alpha"));
  auto rgb = [&](const std::string& name) {
    ImageBuffer img = io::read_image_pfm(path(name));
    if (!img.same_size(b.alpha)) fail(ErrorCode::kDimensionMismatch, record.id + ": " + name + " size differs from alpha");
    img.set_alpha(b.alpha);
    return img;
  };
  b.image = rgb("image");
  b.image_clean = rgb("image_clean");
  b.skin = io::read_gray_pfm(path("skin"));
  b.albedo = rgb("albedo");
  b.tinted_albedo = rgb("tinted_albedo");
  b.diffuse = rgb("diffuse");
  b.target = rgb("target");
  b.maps.specular = io::read_gray_pfm(path("spec"));
  b.maps.shadow = io::read_gray_pfm(path("shadow"));
  b.maps_clean.specular = io::read_gray_pfm(path("spec_clean"));
  b.maps_clean.shadow = io::read_gray_pfm(path("shadow_clean"));
  return b;
}

TrainingExample to_training_example(const ExampleRecord& record, const ExampleBuffers& b, InputVariant variant) {
  TrainingExample e;
  const bool clean = variant == InputVariant::kClean;
  e.input = clean ? b.image_clean : b.image;
  e.specular = clean ? b.maps_clean.specular : b.maps.specular;
  e.shadow = clean ? b.maps_clean.shadow : b.maps.shadow;
  e.target = b.target;
  e.t = record.t;
  e.tinted_albedo = b.tinted_albedo;
  e.tint = record.tint;
  e.albedo = b.albedo;
  e.skin_mask = b.skin;
  return e;
}

std::vector<TrainingExample> load_examples(const DatasetManifest& manifest, const std::filesystem::path& root,
                                           Split split, InputVariant variant, bool only_augmented) {
  std::vector<TrainingExample> out;
  for (const auto& r : manifest.records) {
    if (r.split != split || (only_augmented && !r.augmentation)) continue;
    out.push_back(to_training_example(r, read_example_files(root, r), variant));
  }
  return out;
}

DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir) {
  config.validate();
  DatasetManifest m;
  m.seed = seed;
  m.config = config;
  std::vector<std::pair<Split, int>> jobs;
  for (int i = 0; i < config.train_count; ++i) jobs.emplace_back(Split::kTrain, i);
  for (int i = 0; i < config.eval_count; ++i) jobs.emplace_back(Split::kEval, i);
  m.records.resize(jobs.size());

  std::filesystem::create_directories(out_dir);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        ExampleBuffers b;
        m.records[j] = sample_example(config, seed, jobs[j].first, jobs[j].second, &b);
        write_example_files(out_dir, m.records[j], b);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(jobs.size(), config.threads > 0 ? static_cast<std::size_t>(config.threads) : hw);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

// ------------------------------------------------------------ manifest

std::string scene_spec_to_json(const SceneSpec& spec) { return scene_json(spec).dump(2); }
SceneSpec scene_spec_from_json(const std::string& text) {
  return json_guard([&] { return scene_from_json(json::parse(text)); });
}
std::string env_spec_to_json(const ProceduralEnvSpec& spec) { return env_json(spec).dump(2); }
ProceduralEnvSpec env_spec_from_json(const std::string& text) {
  return json_guard([&] { return env_from_json(json::parse(text)); });
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format"] = "lightdiff-dataset";
  j["version"] = 1;
  j["seed"] = m.seed;
  json config;
  for (const auto& [k, f] : dataset_fields())
    if (k != "threads") std::visit([&](auto field) { config[k] = m.config.*field; }, f);
  j["config"] = config;
  j["records"] = json::array();
  for (const auto& r : m.records) {
    json rec;
    rec["id"] = r.id;
    rec["split"] = to_string(r.split);
    rec["index"] = r.index;
    rec["scene"] = scene_json(r.scene);
    rec["scene_seed"] = r.scene_seed;
    rec["env"] = env_json(r.env);
    rec["env_seed"] = r.env_seed;
    rec["env_attempts"] = r.env_attempts;
    rec["exposure_scale"] = r.exposure_scale;
    if (r.augmentation) {
      const auto& a = *r.augmentation;
      rec["augmentation"] = {{"silhouette", to_string(a.silhouette)},
                             {"silhouette_seed", a.silhouette_seed},
                             {"light_direction", to_json(a.light_direction)},
                             {"gini", a.gini},
                             {"cone_half_angle_deg", a.cone_half_angle_deg},
                             {"sigma", a.sigma},
                             {"opacity", a.opacity},
                             {"tint", a.tint}};
    } else {
      rec["augmentation"] = nullptr;
    }
    rec["t"] = r.t;
    rec["n"] = r.n ? json(*r.n) : json(nullptr);
    rec["gini_source"] = r.gini_source;
    rec["gini_diffuse"] = r.gini_diffuse;
    rec["gini_target"] = r.gini_target;
    rec["tint"] = to_json(r.tint);
    rec["files"] = r.files;
    j["records"].push_back(rec);
  }
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  return json_guard([&] {
    const json j = json::parse(text);
    if (j.value("format", "") != "lightdiff-dataset") fail(ErrorCode::kFormat, "not a dataset manifest");
    if (j.value("version", 0) != 1) fail(ErrorCode::kFormat, "unsupported manifest version");
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const json& config = j.at("config");
    for (const auto& [k, f] : dataset_fields())
      if (k != "threads")
        std::visit(
          [&](auto field) {
            using T = std::remove_reference_t<decltype(m.config.*field)>;
            m.config.*field = config.at(k).get<T>();
          },
          f);
    m.config.validate();
    std::map<std::string, int> seen;
    for (const auto& rec : j.at("records")) {
      ExampleRecord r;
      r.id = rec.at("id").get<std::string>();
      if (seen[r.id]++) fail(ErrorCode::kFormat, "duplicate record id " + r.id);
      r.split = parse_split(rec.at("split").get<std::string>());
      r.index = rec.at("index").get<int>();
      r.scene = scene_from_json(rec.at("scene"));
      r.scene_seed = rec.at("scene_seed").get<std::uint64_t>();
      r.env = env_from_json(rec.at("env"));
      r.env_seed = rec.at("env_seed").get<std::uint64_t>();
      r.env_attempts = rec.at("env_attempts").get<int>();
      r.exposure_scale = rec.at("exposure_scale").get<double>();
      if (!rec.at("augmentation").is_null()) {
        const json& a = rec["augmentation"];
        AugmentationRecord aug;
        aug.silhouette = parse_silhouette_kind(a.at("silhouette").get<std::string>());
        aug.silhouette_seed = a.at("silhouette_seed").get<std::uint64_t>();
        aug.light_direction = vec_from_json(a.at("light_direction"));
        aug.gini = a.at("gini").get<double>();
        aug.cone_half_angle_deg = a.at("cone_half_angle_deg").get<double>();
        aug.sigma = a.at("sigma").get<double>();
        aug.opacity = a.at("opacity").get<double>();
        aug.tint = a.at("tint").get<bool>();
        r.augmentation = aug;
      }
      r.t = rec.at("t").get<double>();
      if (!rec.at("n").is_null()) r.n = rec["n"].get<double>();
      r.gini_source = rec.at("gini_source").get<double>();
      r.gini_diffuse = rec.at("gini_diffuse").get<double>();
      r.gini_target = rec.at("gini_target").get<double>();
      r.tint = rgb_from_json(rec.at("tint"));
      r.files = rec.at("files").get<std::map<std::string, std::string>>();
      m.records.push_back(std::move(r));
    }
    return m;
  });
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f << manifest_to_json(manifest);
  if (!f) fail(ErrorCode::kIo, "write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) { return manifest_from_json(kv::read_file(path)); }

// ------------------------------------------------------------ metrics

double ssim(const GrayImage& a, const GrayImage& b, const GrayImage& alpha) {
  if (!a.same_size(b) || !a.same_size(alpha)) fail(ErrorCode::kDimensionMismatch, "SSIM inputs differ in size");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  double k[2 * kRadius + 1];
  for (int i = -kRadius; i <= kRadius; ++i) k[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
  const int w = a.width();
  const int h = a.height();
  auto clamp01 = [](float v) { return std::clamp(static_cast<double>(v), 0.0, 1.0); };
  double total = 0.0;
  double count = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (alpha.at(x, y) <= 0.0f) continue;
      // Window truncated at the border and renormalized.
      double sw = 0.0, ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int dy = -kRadius; dy <= kRadius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const double wt = k[dy + kRadius] * k[dx + kRadius];
          const double va = clamp01(a.at(xx, yy));
          const double vb = clamp01(b.at(xx, yy));
          sw += wt;
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      ma /= sw;
      mb /= sw;
      const double va = std::max(0.0, saa / sw - ma * ma);
      const double vb = std::max(0.0, sbb / sw - mb * mb);
      const double cov = sab / sw - ma * mb;
      total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      count += 1.0;
    }
  if (count == 0.0) fail(ErrorCode::kEmptyRegion, "no pixels with alpha > 0");
  return total / count;
}

Metrics compute_metrics(const ImageBuffer& pred, const ImageBuffer& gt, const GrayImage& alpha) {
  if (!pred.same_size(gt) || !pred.same_size(alpha))
    fail(ErrorCode::kDimensionMismatch, "metric inputs differ in size");
  Metrics m;
  double count = 0.0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (alpha.at(x, y) <= 0.0f) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(pred.channel(x, y, c)) - gt.channel(x, y, c);
        m.mae += std::abs(d);
        m.mse += d * d;
      }
      count += 3.0;
    }
  if (count == 0.0) fail(ErrorCode::kEmptyRegion, "no pixels with alpha > 0");
  m.mae /= count;
  m.mse /= count;
  m.ssim = ssim(pred.luminance(), gt.luminance(), alpha);
  return m;
}

std::vector<MetricsRow> MetricsReport::summary() const {
  std::vector<MetricsRow> out;
  std::vector<double> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MetricsRow& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({"mean", r.method, {}});
      counts.push_back(0.0);
      it = out.end() - 1;
    }
    const auto i = static_cast<std::size_t>(it - out.begin());
    it->metrics.mae += r.metrics.mae;
    it->metrics.mse += r.metrics.mse;
    it->metrics.ssim += r.metrics.ssim;
    counts[i] += 1.0;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].metrics.mae /= counts[i];
    out[i].metrics.mse /= counts[i];
    out[i].metrics.ssim /= counts[i];
  }
  return out;
}

std::string MetricsReport::to_csv() const {
  std::string out = "id,method,mae,mse,ssim\n";
  char buf[256];
  auto emit = [&](const MetricsRow& r) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,%.9g\n", r.id.c_str(), r.method.c_str(), r.metrics.mae,
                  r.metrics.mse, r.metrics.ssim);
    out += buf;
  };
  for (const auto& r : rows) emit(r);
  for (const auto& r : summary()) emit(r);
  return out;
}

std::string MetricsReport::to_table() const {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s\n", "method", "MAE", "MSE", "SSIM");
  out += buf;
  for (const auto& r : summary()) {
    std::snprintf(buf, sizeof buf, "%-12s %10.6f %10.6f %10.6f\n", r.method.c_str(), r.metrics.mae, r.metrics.mse,
                  r.metrics.ssim);
    out += buf;
  }
  return out;
}

MetricsReport evaluate(const ModelParams& params, const DatasetManifest& manifest, const std::filesystem::path& root,
                       const EvalOptions& options) {
  const bool albedo = params.has_prefix(kAlbedoPrefix);
  MetricsReport report;
  for (const auto& r : manifest.records) {
    if (r.split != Split::kEval || (options.only_augmented && !r.augmentation)) continue;
    const ExampleBuffers b = read_example_files(root, r);
    const double t = options.record_t ? r.t : 0.0;
    const ImageBuffer& target = options.record_t ? b.target : b.diffuse;
    report.rows.push_back({r.id, "diffusion", compute_metrics(diffuse(params, b.image, t), target, b.alpha)});
    report.rows.push_back({r.id, "identity", compute_metrics(b.image, target, b.alpha)});
    if (albedo)
      report.rows.push_back({r.id, "albedo", compute_metrics(iterated_albedo(params, b.image, options.albedo_iters),
                                                             b.tinted_albedo, b.alpha)});
  }
  if (report.rows.empty()) fail(ErrorCode::kEmptyRegion, "no eval records to evaluate");
  return report;
}

}  // namespace lightdiff
