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

#include "doctest.h"
#include "lightdiff/error.hpp"
#include "lightdiff/model.hpp"
#include "lightdiff/renderer.hpp"
#include "support/examples.hpp"

using namespace lightdiff;

namespace {

ImageBuffer random_image(int w, int h, std::uint64_t seed, float alpha = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.5f);
  ImageBuffer img(w, h);
  for (auto& v : img.rgb_data()) v = u(rng);
  for (auto& a : img.alpha_data()) a = alpha;
  return img;
}

void randomize(ModelParams& p, std::uint64_t seed, float scale = 0.3f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, scale);
  for (auto& t : p.params())
    for (auto& v : t.value) v += n(rng);
}

ModelParams default_model(std::uint64_t seed = 0) {
  return init_model(NetConfig::specshadow_default(), NetConfig::diffusion_default(), {}, seed);
}

}  // namespace

TEST_CASE("network configuration") {
  const auto g = NetConfig::specshadow_default();
  CHECK(g.encoder == std::vector<int>{8, 16, 32});
  CHECK(g.bottleneck == 32);
  CHECK(g.in_channels == 4);
  CHECK(g.divisor() == 8);
  const auto h = NetConfig::diffusion_default();
  CHECK(h.decoder == std::vector<int>{64, 32, 16});
  CHECK(h.in_channels == 7);
  CHECK(h.out_channels == 3);
  NetConfig bad = g;
  bad.decoder.pop_back();
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = g;
  bad.encoder[1] = 0;
  CHECK_THROWS_AS(bad.validate(), Error);

  const auto params = default_model();
  CHECK(infer_net_config(params, kSpecShadowPrefix) == g);
  CHECK(infer_net_config(params, kDiffusionPrefix) == h);
  CHECK(infer_tint_config(params).filters == 16);
  CHECK_THROWS_AS(infer_net_config(params, kAlbedoPrefix), Error);
}

TEST_CASE("forward passes") {
  auto params = default_model(3);
  const auto img = random_image(64, 64, 1);

  SUBCASE("shapes and the zero-head contract") {
    const auto maps = forward_specshadow(params, img);
    CHECK(maps.specular.width() == 64);
    CHECK(maps.shadow.height() == 64);
    // Zero head: logistic(0) = 0.5 on the matte.
    for (float v : maps.specular.data()) CHECK(v == 0.5f);
    const auto zero = forward_specshadow(params, random_image(64, 64, 2, 1.0f));
    CHECK(zero.shadow[100] == 0.5f);
    const auto out = forward_diffusion(params, img, maps, 0.4);
    CHECK(out.width() == 64);
    // Zero head: the diffusion output is max(I, 1e-3).
    for (std::size_t k = 0; k < out.rgb_data().size(); ++k)
      CHECK(out.rgb_data()[k] == doctest::Approx(std::max(img.rgb_data()[k], 1e-3f)).epsilon(1e-5));
  }
  SUBCASE("maps vanish off the matte") {
    ImageBuffer half = img;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 32; ++x) half.alpha(x, y) = 0.0f;
    const auto maps = forward_specshadow(params, half);
    CHECK(maps.specular.at(3, 3) == 0.0f);
    CHECK(maps.specular.at(40, 3) == 0.5f);
  }
  SUBCASE("range over random weights and inputs") {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      auto p = default_model(trial);
      randomize(p, trial + 50, 0.5f);
      const auto x = random_image(16, 16, trial + 7);
      const auto maps = forward_specshadow(p, x);
      for (float v : maps.specular.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
      for (float v : maps.shadow.data()) REQUIRE((v >= 0.0f && v <= 1.0f));
      const auto out = forward_diffusion(p, x, maps, 0.5);
      for (float v : out.rgb_data()) REQUIRE((v >= 0.0f && std::isfinite(v)));
    }
  }
  SUBCASE("determinism") {
    randomize(params, 4);
    const auto a = forward_diffusion(params, img, forward_specshadow(params, img), 0.7);
    const auto b = forward_diffusion(params, img, forward_specshadow(params, img), 0.7);
    CHECK(a == b);
    const auto c = forward_diffusion(params, img, forward_specshadow(params, img), 0.1);
    CHECK_FALSE(a == c);
  }
  SUBCASE("errors") {
    const auto maps = forward_specshadow(params, img);
    for (double t : {-0.1, 1.5, std::nan("")}) {
      try {
        (void)forward_diffusion(params, img, maps, t);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kParameter);
      }
    }
    try {
      (void)forward_specshadow(params, random_image(60, 64, 1));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kShape);
    }
    CHECK_THROWS_AS(forward_diffusion(params, img, forward_specshadow(params, random_image(32, 32, 1)), 0.5), Error);
  }
  SUBCASE("single albedo iteration is one diffusion pass at t = 0") {
    randomize(params, 5);
    const auto one = iterated_albedo(params, img, 1);
    const auto ref = composite(forward_diffusion(params, img, forward_specshadow(params, img), 0.0), img.alpha_image(), img);
    CHECK(one == ref);
    CHECK_THROWS_AS(iterated_albedo(params, img, 0), Error);
  }
}

TEST_CASE("full U-shape gradient check in double precision") {
  NetConfig cfg;
  cfg.encoder = {3, 4, 5};
  cfg.bottleneck = 5;
  cfg.decoder = {5, 4, 3};
  cfg.in_channels = 7;
  cfg.out_channels = 3;
  nn::ParamStore<double> ps;
  std::mt19937_64 rng(11);
  init_unet(ps, "h.", cfg, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& v : ps.get("h.head.w").value) v = n(rng);
  for (auto& v : ps.get("h.head.b").value) v = n(rng);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> input(7 * 64);
  for (auto& v : input) v = u(rng);
  std::vector<double> target(3 * 64), alpha(64);
  for (auto& v : target) v = -5.0;
  for (auto& v : alpha) v = u(rng);
  const double err = nn::grad_check(
      [&](auto& g, auto& p) {
        const auto x = g.input({7, 8, 8}, input);
        const auto z = unet_forward(g, p, "h.", cfg, x, true);
        const auto out = g.softplus_residual(z, g.slice_channels(x, 0, 3));
        const auto sd = g.sigmoid_clamp(g.slice_channels(z, 0, 2), 1.0, 0.0);
        return g.add(g.masked_l1(out, target, alpha),
                     g.masked_l1(sd, std::vector<double>(128, -1.0), alpha));
      },
      ps, 100, 5);
  MESSAGE("U-shape max relative error " << err);
  CHECK(err < 1e-4);
}

TEST_CASE("image loss") {
  const auto a = random_image(8, 8, 1);
  ImageBuffer b = a;
  CHECK(loss(a, b, GrayImage(8, 8, 1.0f)) == 0.0);
  for (auto& v : b.rgb_data()) v += 0.1f;
  CHECK(loss(b, a, GrayImage(8, 8, 1.0f)) == doctest::Approx(0.1).epsilon(1e-5));
  GrayImage region(8, 8);
  region.at(2, 2) = 1.0f;
  ImageBuffer c = a;
  for (auto& v : c.rgb_data()) v += 5.0f;
  c.set_rgb(2, 2, a.rgb(2, 2));
  CHECK(loss(c, a, region) == 0.0);
  try {
    (void)loss(a, b, GrayImage(8, 8));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyRegion);
  }
}

TEST_CASE("untint") {
  const auto a = random_image(4, 4, 3);
  CHECK(untint(a, Rgb{1, 1, 1}) == a);
  const Rgb c{1.4, 0.9, 0.6};
  ImageBuffer tinted = a;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) tinted.set_rgb(x, y, a.rgb(x, y) * c);
  const auto back = untint(tinted, c);
  for (std::size_t k = 0; k < a.rgb_data().size(); ++k) CHECK(back.rgb_data()[k] == doctest::Approx(a.rgb_data()[k]).epsilon(1e-6));
  ImageBuffer bright = a;
  for (auto& v : bright.rgb_data()) v = 100.0f;
  const auto clamped = untint(bright, c);
  for (float v : clamped.rgb_data()) CHECK(v == 4.0f);
  try {
    (void)untint(a, Rgb{1.0, 0.0005, 1.0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateTint);
  }

  // Lambertian sphere under a constant colored environment renders albedo * c.
  SceneSpec spec;
  spec.albedo = AlbedoPattern::kNoise;
  spec.skin_albedo = Rgb{0.6, 0.5, 0.4};
  const Renderer r(build_scene(spec, 2), {48, 48});
  const auto bundle = r.render_env(EnvironmentMap(32, 16, c));
  const auto rec = untint(bundle.image, c);
  double worst = 0.0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      if (bundle.image.alpha(x, y) == 0) continue;
      for (int k = 0; k < 3; ++k) {
        const double truth = bundle.albedo_gt.channel(x, y, k);
        worst = std::max(worst, std::abs(rec.channel(x, y, k) - truth) / truth);
      }
    }
  MESSAGE("worst relative albedo error " << worst);
  CHECK(worst < 0.02);
}

TEST_CASE("tint estimation input") {
  const auto e = fixtures::rendered_example(2, 32, 0.5, 2.0);
  const auto x = tint_input(e.tinted_albedo, e.skin_mask, 16);
  CHECK(x.size() == 4 * 256);
  const auto params = default_model();
  // Zero linear head: exp(0) per channel, normalized to unit luminance.
  const Rgb t = estimate_tint(params, e.tinted_albedo, e.skin_mask);
  CHECK(t.r == doctest::Approx(1.0));
  CHECK(t.b == doctest::Approx(1.0));
  try {
    (void)estimate_tint(params, e.tinted_albedo, GrayImage(32, 32));
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kEmptyRegion);
  }
}

TEST_CASE("parameter files") {
  auto params = default_model(9);
  randomize(params, 10);
  const auto bytes = serialize_params(params);
  const auto back = deserialize_params(bytes);
  CHECK(back == params);
  CHECK(serialize_params(back) == bytes);
  const auto path = std::filesystem::temp_directory_path() / "lightdiff_params_test.bin";
  save_params(params, path);
  CHECK(load_params(path) == params);
  std::filesystem::remove(path);

  auto expect_format = [](const std::string& b) {
    try {
      (void)deserialize_params(b);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kFormat);
    }
  };
  expect_format("XXXX" + bytes.substr(4));
  expect_format(bytes.substr(0, bytes.size() - 3));
  expect_format(bytes + "z");
  std::string nan_bytes = bytes;
  nan_bytes[nan_bytes.size() - 1] = static_cast<char>(0x7F);
  nan_bytes[nan_bytes.size() - 2] = static_cast<char>(0xC0);
  expect_format(nan_bytes);
  try {
    (void)load_params("/nonexistent/params.bin");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("training configuration") {
  TrainConfig c;
  c.seed = 42;
  c.schedule = LrSchedule::kCosine;
  c.steps_albedo = 30;
  c.h.encoder = {8, 8, 8};
  c.h.decoder = {8, 8, 8};
  c.h.bottleneck = 8;
  CHECK(parse_train_config(format_train_config(c)) == c);
  const auto d = parse_train_config("# comment\nseed = 7\n\nlearning_rate=5e-4  # inline\n");
  CHECK(d.seed == 7);
  CHECK(d.learning_rate == 5e-4);
  CHECK(d.steps_h == TrainConfig{}.steps_h);
  for (const char* bad : {"nonsense=1", "seed", "batch_size=0", "learning_rate=abc", "g_encoder=8,16", "schedule=step"}) {
    try {
      (void)parse_train_config(bad);
      FAIL("expected an error for " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParameter);
    }
  }
}

TEST_CASE("training") {
  std::vector<TrainingExample> data;
  for (std::uint64_t s = 0; s < 3; ++s) data.push_back(fixtures::rendered_example(s, 16, 0.25 * static_cast<double>(s), 2.0));
  TrainConfig c;
  c.g.encoder = {4, 4, 4};
  c.g.decoder = {4, 4, 4};
  c.g.bottleneck = 4;
  c.h = c.g;
  c.h.in_channels = 7;
  c.h.out_channels = 3;
  c.tint.filters = 4;
  c.steps_g = 5;
  c.steps_h = 5;
  c.steps_albedo = 3;
  c.steps_tint = 4;
  c.albedo_iters = 2;
  c.batch_size = 2;
  c.log_every = 0;

  SUBCASE("identical seeds give identical parameters") {
    const auto a = train(data, c);
    const auto b = train(data, c);
    CHECK(a.params == b.params);
    CHECK(a.history.size() == 17);
    CHECK(a.history.back().step == 16);
    CHECK(a.history.front().stage == "g");
    CHECK(a.history.back().stage == "tint");
    CHECK(a.params.has_prefix(kAlbedoPrefix));
    c.seed = 1;
    CHECK_FALSE(train(data, c).params == a.params);
  }
  SUBCASE("history csv") {
    const auto a = train(data, c);
    const auto path = std::filesystem::temp_directory_path() / "lightdiff_history.csv";
    write_history_csv(path, a.history);
    std::ifstream f(path);
    std::string header, first;
    std::getline(f, header);
    std::getline(f, first);
    CHECK(header == "step,loss");
    CHECK(first.rfind("0,", 0) == 0);
    std::filesystem::remove(path);
  }
  SUBCASE("loss decreases at a tenth of the learning rate") {
    TrainConfig slow;
    slow.steps_g = 0;
    slow.steps_h = 300;
    slow.batch_size = 1;
    slow.log_every = 0;
    slow.learning_rate = 1e-4;
    const auto e = fixtures::rendered_example(1, 32, 0.0, 1.0);
    const auto r = train({e}, slow);
    double prev = 1e9;
    for (std::size_t b = 0; b < 6; ++b) {
      double m = 0.0;
      for (std::size_t i = 0; i < 50; ++i) m += r.history[b * 50 + i].loss;
      CHECK(m / 50.0 <= prev);
      prev = m / 50.0;
    }
    slow.steps_g = 200;
    slow.steps_h = 0;
    const auto rg = train({e}, slow);
    for (std::size_t i = 1; i < rg.history.size(); ++i) CHECK(rg.history[i].loss <= rg.history[i - 1].loss);
  }
  SUBCASE("empty data") {
    CHECK_THROWS_AS(train({}, c), Error);
  }
}
