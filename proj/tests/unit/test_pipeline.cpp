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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "lightdiff/error.hpp"
#include "lightdiff/keyvalue.hpp"
#include "lightdiff/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace lightdiff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("lightdiff_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

DatasetConfig small_config() {
  DatasetConfig c;
  c.train_count = 3;
  c.eval_count = 2;
  c.width = 16;
  c.height = 16;
  c.env_height = 8;
  c.threads = 1;
  return c;
}

ImageBuffer constant_image(int w, int h, float v) {
  ImageBuffer img(w, h);
  for (auto& x : img.rgb_data()) x = v;
  for (auto& a : img.alpha_data()) a = 1.0f;
  return img;
}

ErrorCode code_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

// Direct SSIM at one pixel with the full 11x11 window.
double ssim_at(const GrayImage& a, const GrayImage& b, int x, int y) {
  double sw = 0, ma = 0, mb = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      sw += w;
      ma += w * a.at(x + dx, y + dy);
      mb += w * b.at(x + dx, y + dy);
    }
  ma /= sw;
  mb /= sw;
  double va = 0, vb = 0, cov = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)) / sw;
      va += w * (a.at(x + dx, y + dy) - ma) * (a.at(x + dx, y + dy) - ma);
      vb += w * (b.at(x + dx, y + dy) - mb) * (b.at(x + dx, y + dy) - mb);
      cov += w * (a.at(x + dx, y + dy) - ma) * (b.at(x + dx, y + dy) - mb);
    }
  const double c1 = 1e-4, c2 = 9e-4;
  return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

TEST_CASE("dataset configuration") {
  const DatasetConfig d;
  CHECK(parse_dataset_config(format_dataset_config(d)) == d);
  const auto c = parse_dataset_config("train_count = 10\n# comment\nexposure = 0.5\n");
  CHECK(c.train_count == 10);
  CHECK(c.exposure == 0.5);
  CHECK(code_of([] { parse_dataset_config("bogus = 1"); }) == ErrorCode::kParameter);
  CHECK(code_of([] { parse_dataset_config("width = abc"); }) == ErrorCode::kParameter);
  CHECK(code_of([] { parse_dataset_config("aug_probability = 1.5"); }) == ErrorCode::kParameter);
  CHECK(code_of([] { parse_dataset_config("train_count = 0\neval_count = 0"); }) == ErrorCode::kParameter);
}

TEST_CASE("scene and env specs round-trip through JSON") {
  SceneSpec s;
  s.geometry = GeometryKind::kBust;
  s.albedo = AlbedoPattern::kNoise;
  s.skin_albedo = {0.61, 0.44, 0.351};
  s.occluder = OccluderSpec{};
  const auto back = scene_spec_from_json(scene_spec_to_json(s));
  CHECK(back.geometry == s.geometry);
  CHECK(back.albedo == s.albedo);
  CHECK(back.skin_albedo == s.skin_albedo);
  CHECK(back.occluder.has_value());

  ProceduralEnvSpec e;
  e.ambient = {0.1, 0.2, 0.3};
  e.lobes.push_back({normalize(Vec3{1, 2, 3}), 0.3, 5.0, {1.0, 0.9, 0.8}});
  const auto eb = env_spec_from_json(env_spec_to_json(e));
  CHECK(gen_procedural_env(eb, 3) == gen_procedural_env(e, 3));
  CHECK(code_of([] { env_spec_from_json("{not json"); }) == ErrorCode::kFormat);
}

TEST_CASE("exponent for a target Gini") {
  const auto env = fixtures::random_lobe_env(5, 8);
  const double g_s = gini(env);
  const double g_d = gini(diffuse_convolve(env, 1.0, env.height()));
  CHECK(exponent_for_gini(env, g_d).value() == 1.0);
  for (double t : {0.2, 0.5, 0.8}) {
    const double target = g_d + t * (g_s - g_d);
    const auto n = exponent_for_gini(env, target);
    if (!n) continue;
    CHECK(gini(diffuse_convolve(env, *n, env.height())) == doctest::Approx(target).epsilon(1e-6));
  }
  CHECK_FALSE(exponent_for_gini(env, 1.0).has_value());
}

TEST_CASE("single-example dataset") {
  TempDir dir("single");
  DatasetConfig c = small_config();
  c.train_count = 1;
  c.eval_count = 0;
  const auto m = generate_dataset(c, 7, dir.path);
  REQUIRE(m.records.size() == 1);
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(m.records[0].files.size() == 12);
  for (const auto& [name, rel] : m.records[0].files) CHECK(fs::exists(dir.path / rel));
  const auto back = read_manifest(dir.path / "manifest.json");
  CHECK(manifest_to_json(back) == manifest_to_json(m));
  const auto& r = m.records[0];
  CHECK(r.t >= 0.0);
  CHECK(r.t <= 1.0);
  CHECK(luminance(r.tint) == doctest::Approx(1.0));
}

TEST_CASE("dataset generation is deterministic and regenerates from the manifest") {
  TempDir a("det_a");
  TempDir b("det_b");
  DatasetConfig c = small_config();
  c.aug_probability = 1.0;
  generate_dataset(c, 11, a.path);
  c.threads = 2;
  const auto m = generate_dataset(c, 11, b.path);
  CHECK(slurp(a.path / "manifest.json") == slurp(b.path / "manifest.json"));
  for (const auto& r : m.records)
    for (const auto& [name, rel] : r.files) CHECK(slurp(a.path / rel) == slurp(b.path / rel));

  const auto back = read_manifest(b.path / "manifest.json");
  for (const auto& r : back.records) {
    const auto fresh = realize_example(r, {c.width, c.height}, c.env_height);
    const auto disk = read_example_files(b.path, r);
    CHECK(fresh.image == disk.image);
    CHECK(fresh.image_clean == disk.image_clean);
    CHECK(fresh.target == disk.target);
    CHECK(fresh.diffuse == disk.diffuse);
    CHECK(fresh.tinted_albedo == disk.tinted_albedo);
    CHECK(fresh.maps.shadow == disk.maps.shadow);
    CHECK(fresh.maps_clean.specular == disk.maps_clean.specular);
  }
}

TEST_CASE("augmentation frequency") {
  DatasetConfig c = small_config();
  c.width = 8;
  c.height = 8;
  int augmented = 0;
  for (int i = 0; i < 100; ++i) augmented += sample_example(c, 3, Split::kTrain, i).augmentation.has_value();
  // Binomial(100, 0.5) 95% interval.
  CHECK(augmented >= 40);
  CHECK(augmented <= 60);
}

TEST_CASE("augmented examples keep the clean input") {
  DatasetConfig c = small_config();
  c.aug_probability = 1.0;
  ExampleBuffers b;
  const auto r = sample_example(c, 2, Split::kTrain, 0, &b);
  REQUIRE(r.augmentation.has_value());
  const auto aug = to_training_example(r, b, InputVariant::kAugmented);
  const auto clean = to_training_example(r, b, InputVariant::kClean);
  CHECK(clean.input == b.image_clean);
  CHECK(aug.input == b.image);
  CHECK(aug.target == clean.target);
  // The external shadow only darkens.
  for (std::size_t i = 0; i < b.image.rgb_data().size(); ++i)
    CHECK(b.image.rgb_data()[i] <= b.image_clean.rgb_data()[i] * 1.2f + 1e-6f);
}

TEST_CASE("exposure normalization") {
  const DatasetConfig c = small_config();
  ExampleBuffers b;
  sample_example(c, 4, Split::kEval, 1, &b);
  double sum = 0.0, count = 0.0;
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x)
      if (b.alpha.at(x, y) > 0.0f) {
        const Rgb p = b.image_clean.rgb(x, y);
        sum += luminance(p);
        count += 1.0;
      }
  CHECK(sum / count == doctest::Approx(c.exposure).epsilon(1e-5));
}

TEST_CASE("eval split uses held-out seeds") {
  const DatasetConfig c = small_config();
  std::set<std::uint64_t> train_scene, train_env;
  for (int i = 0; i < 5; ++i) {
    const auto r = sample_example(c, 9, Split::kTrain, i);
    train_scene.insert(r.scene_seed);
    train_env.insert(r.env_seed);
  }
  for (int i = 0; i < 5; ++i) {
    const auto r = sample_example(c, 9, Split::kEval, i);
    CHECK(train_scene.count(r.scene_seed) == 0);
    CHECK(train_env.count(r.env_seed) == 0);
  }
}

TEST_CASE("unusable lighting is redrawn and eventually rejected") {
  DatasetConfig c = small_config();
  c.min_lobes = 0;
  c.max_lobes = 0;
  c.ambient_min = 0.0;
  c.ambient_max = 0.0;
  c.max_env_attempts = 3;
  CHECK(code_of([&] { sample_example(c, 1, Split::kTrain, 0); }) == ErrorCode::kDegenerateLighting);
}

TEST_CASE("metrics examples") {
  const auto gt = constant_image(12, 12, 0.4f);
  const auto alpha = gt.alpha_image();
  const auto same = compute_metrics(gt, gt, alpha);
  CHECK(same.mae == 0.0);
  CHECK(same.mse == 0.0);
  CHECK(same.ssim == doctest::Approx(1.0));
  const auto shifted = compute_metrics(constant_image(12, 12, 0.5f), gt, alpha);
  CHECK(shifted.mae == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(shifted.mse == doctest::Approx(0.01).epsilon(1e-5));

  CHECK(code_of([&] { compute_metrics(gt, gt, GrayImage(12, 12, 0.0f)); }) == ErrorCode::kEmptyRegion);
  CHECK(code_of([&] { compute_metrics(gt, constant_image(8, 8, 0.4f), alpha); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("SSIM of a checkerboard against its inverse") {
  GrayImage x(32, 32), inv(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int i = 0; i < 32; ++i) {
      x.at(i, y) = ((i / 2 + y / 2) % 2) ? 0.9f : 0.1f;
      inv.at(i, y) = 1.0f - x.at(i, y);
    }
  const GrayImage alpha(32, 32, 1.0f);
  const double s = ssim(x, inv, alpha);
  CHECK(s < 0.2);
  CHECK(s >= -1.0);
  CHECK(ssim(inv, x, alpha) == s);
}

TEST_CASE("SSIM matches a direct window evaluation in the interior") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayImage a(24, 24), b(24, 24), alpha(24, 24, 0.0f);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = std::clamp(a[i] + 0.3f * (u(rng) - 0.5f), 0.0f, 1.0f);
  }
  double expected = 0.0;
  int count = 0;
  for (int y = 5; y < 19; ++y)
    for (int x = 5; x < 19; ++x) {
      alpha.at(x, y) = 1.0f;
      expected += ssim_at(a, b, x, y);
      ++count;
    }
  CHECK(ssim(a, b, alpha) == doctest::Approx(expected / count).epsilon(1e-9));
}

TEST_CASE("metrics report") {
  MetricsReport rep;
  rep.rows.push_back({"a", "diffusion", {0.1, 0.01, 0.9}});
  rep.rows.push_back({"a", "identity", {0.3, 0.09, 0.7}});
  rep.rows.push_back({"b", "diffusion", {0.2, 0.04, 0.8}});
  const auto s = rep.summary();
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "diffusion");
  CHECK(s[0].metrics.mae == doctest::Approx(0.15));
  CHECK(s[1].metrics.ssim == doctest::Approx(0.7));
  const auto csv = rep.to_csv();
  CHECK(csv.rfind("id,method,mae,mse,ssim\n", 0) == 0);
  CHECK(csv.find("mean,diffusion,0.15") != std::string::npos);
  CHECK(rep.to_table().find("identity") != std::string::npos);
}

TEST_CASE("evaluation of an untrained model") {
  TempDir dir("eval");
  DatasetConfig c = small_config();
  const auto m = generate_dataset(c, 5, dir.path);
  NetConfig g = NetConfig::specshadow_default();
  NetConfig h = NetConfig::diffusion_default();
  g.encoder = h.encoder = {4, 4};
  g.decoder = h.decoder = {4, 4};
  g.bottleneck = h.bottleneck = 4;
  const auto params = init_model(g, h, {}, 1);
  const auto rep = evaluate(params, m, dir.path);
  CHECK(rep.rows.size() == 2 * static_cast<std::size_t>(c.eval_count));
  const auto s = rep.summary();
  // h is the identity at initialization.
  CHECK(s[0].metrics.mae == doctest::Approx(s[1].metrics.mae).epsilon(1e-3));
  const auto train = load_examples(m, dir.path, Split::kTrain, InputVariant::kAugmented);
  CHECK(train.size() == static_cast<std::size_t>(c.train_count));
}
