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
#include <random>

#include "doctest.h"
#include "lightdiff/error.hpp"
#include "lightdiff/nn.hpp"

using namespace lightdiff;
using namespace lightdiff::nn;
using G = Graph<double>;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = u(rng);
  return v;
}

// Fixed random projection to a scalar so every output element matters.
std::size_t project(auto& g, std::size_t y, std::uint64_t seed) {
  const Shape s = g.shape(y);
  // Targets sit far below the outputs so |.| stays differentiable; the random
  // alpha weights make the projection non-trivial.
  std::vector<double> target(s.size(), -10.0);
  return g.masked_l1(y, target, random_values(s.plane(), seed + 1000, 0.1, 1.0));
}

ParamStore<double> conv_params(int cin, int cout, std::uint64_t seed, const std::string& prefix = "") {
  ParamStore<double> ps;
  ps.add(prefix + "w", {cout, cin * 9}, random_values(static_cast<std::size_t>(cout) * cin * 9, seed));
  ps.add(prefix + "b", {cout}, random_values(static_cast<std::size_t>(cout), seed + 1));
  return ps;
}

// The input is a parameter too so gradients through every op input are checked.
void add_input(ParamStore<double>& ps, Shape s, std::uint64_t seed) {
  ps.add("x", {s.c, s.h, s.w}, random_values(s.size(), seed));
}

std::size_t x_of(auto& g, auto& ps) {
  auto& p = ps.get("x");
  return g.param(p, {p.dims[0], p.dims[1], p.dims[2]});
}

}  // namespace

TEST_CASE("parameter store") {
  ParamStore<float> ps;
  ps.add("a.w", {2, 3}, std::vector<float>(6, 1.0f));
  ps.add("b.w", {1}, {2.0f});
  CHECK(ps.has_prefix("a."));
  CHECK_FALSE(ps.has_prefix("c."));
  CHECK(ps.scalar_count() == 7);
  CHECK_THROWS_AS(ps.add("a.w", {1}, {0.0f}), Error);
  CHECK_THROWS_AS(ps.add("c", {2}, {0.0f}), Error);
  ps.copy_prefix("a.", "z.");
  CHECK(ps.get("z.w").value == ps.get("a.w").value);
  ps.erase_prefix("a.");
  CHECK_FALSE(ps.contains("a.w"));
  CHECK(ps.cast<double>().cast<float>() == ps);
}

TEST_CASE("conv3x3 against a direct loop") {
  auto ps = conv_params(2, 3, 1);
  add_input(ps, {2, 5, 4}, 2);
  G g;
  const auto y = g.conv3x3(x_of(g, ps), g.param(ps.get("w"), {3, 1, 18}), g.param(ps.get("b"), {3, 1, 1}));
  const auto& x = ps.get("x").value;
  const auto& w = ps.get("w").value;
  for (int o = 0; o < 3; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 4; ++xx) {
        double s = ps.get("b").value[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = -1; ky <= 1; ++ky)
            for (int kx = -1; kx <= 1; ++kx) {
              const int sy = yy + ky, sx = xx + kx;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
              s += w[o * 18 + c * 9 + (ky + 1) * 3 + (kx + 1)] * x[c * 20 + sy * 4 + sx];
            }
        CHECK(g.value(y)[o * 20 + yy * 4 + xx] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("gradient checks per layer") {
  SUBCASE("single conv + loss") {
    auto ps = conv_params(3, 4, 3);
    add_input(ps, {3, 6, 6}, 4);
    const double err = grad_check(
        [](auto& g, auto& p) {
          const auto y = g.conv3x3(x_of(g, p), g.param(p.get("w"), {4, 1, 27}), g.param(p.get("b"), {4, 1, 1}));
          return project(g, y, 1);
        },
        ps);
    MESSAGE("conv " << err);
    CHECK(err < 1e-5);
  }
  SUBCASE("leaky relu") {
    ParamStore<double> ps;
    add_input(ps, {2, 4, 4}, 5);
    const double err = grad_check([](auto& g, auto& p) { return project(g, g.leaky_relu(x_of(g, p)), 2); }, ps);
    CHECK(err < 1e-4);
  }
  SUBCASE("blur pool") {
    ParamStore<double> ps;
    add_input(ps, {2, 6, 8}, 6);
    const double err = grad_check([](auto& g, auto& p) { return project(g, g.blur_pool(x_of(g, p)), 3); }, ps);
    CHECK(err < 1e-4);
  }
  SUBCASE("bilinear upsample") {
    ParamStore<double> ps;
    add_input(ps, {2, 3, 5}, 7);
    const double err = grad_check([](auto& g, auto& p) { return project(g, g.upsample2x(x_of(g, p)), 4); }, ps);
    CHECK(err < 1e-4);
  }
  SUBCASE("concat, slice, add and masking") {
    ParamStore<double> ps;
    add_input(ps, {3, 4, 4}, 8);
    const double err = grad_check(
        [](auto& g, auto& p) {
          const auto x = x_of(g, p);
          const auto a = g.slice_channels(x, 0, 2);
          const auto b = g.slice_channels(x, 1, 3);
          const std::vector<double> alpha = random_values(16, 77, 0.0, 1.0);
          const auto mixed = g.mask_mix(g.add(a, g.scale(b, 0.7)), g.mask(b, alpha), alpha);
          return project(g, g.concat(mixed, x), 5);
        },
        ps);
    CHECK(err < 1e-4);
  }
  SUBCASE("heads") {
    ParamStore<double> ps;
    add_input(ps, {3, 4, 4}, 9);
    ps.add("base", {3, 4, 4}, random_values(48, 10, 0.01, 2.0));
    const double err = grad_check(
        [](auto& g, auto& p) {
          const auto x = x_of(g, p);
          const auto base = g.param(p.get("base"), {3, 4, 4});
          return project(g, g.concat(g.sigmoid_clamp(x), g.softplus_residual(x, base)), 6);
        },
        ps);
    CHECK(err < 1e-4);
  }
  SUBCASE("global average, linear and exp") {
    ParamStore<double> ps;
    add_input(ps, {4, 3, 3}, 11);
    ps.add("w", {2, 4}, random_values(8, 12));
    ps.add("b", {2}, random_values(2, 13));
    const double err = grad_check(
        [](auto& g, auto& p) {
          const auto v = g.global_average(x_of(g, p));
          return project(g, g.exp(g.linear(v, g.param(p.get("w"), {2, 1, 4}), g.param(p.get("b"), {2, 1, 1}))), 7);
        },
        ps);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("blur pool of a constant input has a uniform gradient") {
  for (double c : {0.0, 1.0, -3.5}) {
    G g;
    const auto x = g.input({2, 8, 6}, std::vector<double>(96, c), true);
    const auto y = g.blur_pool(x);
    for (double v : g.value(y)) CHECK(v == doctest::Approx(c));
    std::vector<double> ones(g.shape(y).plane(), 1.0);
    std::vector<double> low(g.shape(y).size(), c - 1.0);
    g.backward(g.masked_l1(y, low, ones));
    const auto& gx = g.grad(x);
    for (double v : gx) CHECK(v == doctest::Approx(gx[0]).epsilon(1e-12));
  }
  G g;
  CHECK_THROWS_AS(g.blur_pool(g.input({1, 3, 4}, std::vector<double>(12))), Error);
}

TEST_CASE("upsample reproduces constants and linear ramps in the interior") {
  G g;
  std::vector<double> ramp(8);
  for (int i = 0; i < 8; ++i) ramp[i] = i % 4;
  const auto y = g.upsample2x(g.input({1, 2, 4}, ramp));
  // Output column o samples source (o + 0.5) / 2 - 0.5.
  for (int o = 1; o < 7; ++o) CHECK(g.value(y)[o] == doctest::Approx((o + 0.5) / 2.0 - 0.5));
  CHECK(g.value(y)[0] == 0.0);
  CHECK(g.value(y)[7] == 3.0);
}

TEST_CASE("heads at zero") {
  G g;
  const auto z = g.input({1, 1, 3}, {0.0, 0.0, 0.0});
  CHECK(g.value(g.sigmoid_clamp(z))[0] == doctest::Approx(0.5));
  const auto base = g.input({1, 1, 3}, {0.2, 3.0, 0.0});
  const auto h = g.softplus_residual(z, base);
  CHECK(g.value(h)[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(g.value(h)[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(g.value(h)[2] == doctest::Approx(1e-3).epsilon(1e-9));
  const auto big = g.input({1, 1, 2}, {-50.0, 50.0});
  CHECK(g.value(g.sigmoid_clamp(big))[0] == 0.0);
  CHECK(g.value(g.sigmoid_clamp(big))[1] == 1.0);
}

TEST_CASE("masked l1") {
  G g;
  const auto p = g.input({2, 1, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(g.value(g.masked_l1(p, {1.0, 2.0, 3.0, 4.0}, {1.0, 1.0}))[0] == 0.0);
  CHECK(g.value(g.masked_l1(p, {0.9, 1.9, 2.9, 3.9}, {1.0, 1.0}))[0] == doctest::Approx(0.1));
  CHECK(g.value(g.masked_l1(p, {1.0, 9.0, 3.0, 9.0}, {1.0, 0.0}))[0] == 0.0);
  try {
    (void)g.masked_l1(p, {1.0, 2.0, 3.0, 4.0}, {0.0, 0.0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyRegion);
  }
}

TEST_CASE("adam") {
  ParamStore<double> ps;
  ps.add("x", {2}, {3.0, -2.0});
  Adam<double> opt({0.1});
  for (int i = 0; i < 500; ++i) {
    G g;
    const auto x = g.param(ps.get("x"), {2, 1, 1});
    g.backward(g.masked_l1(x, {1.0, 1.0}, {1.0}));
    opt.step(ps, "", 0.1 * (1.0 - i / 500.0));
  }
  CHECK(ps.get("x").value[0] == doctest::Approx(1.0).epsilon(0.01));
  CHECK(ps.get("x").value[1] == doctest::Approx(1.0).epsilon(0.01));
  ps.get("x").grad[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(ps, "", 0.1), Error);
}

TEST_CASE("grad_check refines the step near a kink") {
  ParamStore<double> ps;
  ps.add("x", {1, 1, 2}, {3e-5, 0.5});
  GradCheckStats stats;
  const double err = grad_check([](auto& g, auto& p) { return project(g, g.leaky_relu(x_of(g, p)), 8); }, ps, 100, 0,
                                1e-4, &stats);
  CHECK(stats.checked == 2);
  CHECK(stats.refined == 1);
  CHECK(stats.skipped == 0);
  CHECK(err < 1e-9);

  ps.get("x").value[0] = 0.0;
  grad_check([](auto& g, auto& p) { return project(g, g.leaky_relu(x_of(g, p)), 8); }, ps, 100, 0, 1e-4, &stats);
  CHECK(stats.skipped == 1);
}
