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

#include "lightdiff/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <spdlog/spdlog.h>

#include "lightdiff/error.hpp"
#include "lightdiff/keyvalue.hpp"

namespace lightdiff {

namespace {

using nn::Graph;
using nn::ParamStore;
using nn::Shape;

template <class T>
typename Graph<T>::Var conv_layer(Graph<T>& graph, ParamStore<T>& params, const std::string& name,
                                  typename Graph<T>::Var x, bool trainable) {
  auto& w = params.get(name + ".w");
  auto& b = params.get(name + ".b");
  return graph.conv3x3(x, graph.param(w, {w.dims[0], 1, w.dims[1]}, trainable), graph.param(b, {b.dims[0], 1, 1}, trainable));
}

template <class T>
void add_conv(ParamStore<T>& params, const std::string& name, int cin, int cout, std::mt19937_64& rng, bool zero) {
  const std::size_t n = static_cast<std::size_t>(cout) * cin * 9;
  params.add(name + ".w", {cout, cin * 9}, zero ? std::vector<T>(n, T(0)) : nn::kaiming_uniform<T>(n, cin * 9, rng));
  params.add(name + ".b", {cout}, std::vector<T>(static_cast<std::size_t>(cout), T(0)));
}

std::vector<int> conv_inputs(const NetConfig& c) {
  std::vector<int> in;
  const int d = c.depth();
  for (int i = 0; i < d; ++i) in.push_back(i == 0 ? c.in_channels : c.encoder[static_cast<std::size_t>(i - 1)]);
  in.push_back(c.encoder.back());
  for (int i = 0; i < d; ++i)
    in.push_back(i == 0 ? c.bottleneck
                        : c.decoder[static_cast<std::size_t>(i - 1)] + c.encoder[static_cast<std::size_t>(d - i)]);
  in.push_back(c.decoder.back() + c.encoder.front());
  return in;
}

template <class T>
std::vector<T> plane_of(const GrayImage& g) {
  return std::vector<T>(g.data().begin(), g.data().end());
}

template <class T>
std::vector<T> concat_vec(std::initializer_list<const std::vector<T>*> parts) {
  std::vector<T> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

void require_divisible(const ImageBuffer& image, const NetConfig& c) {
  if (image.width() % c.divisor() != 0 || image.height() % c.divisor() != 0)
    fail(ErrorCode::kShape, "image size " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                " is not a multiple of " + std::to_string(c.divisor()));
}

// (S, D) from RGB + alpha, zero off the matte.
template <class T>
typename Graph<T>::Var specshadow_graph(Graph<T>& graph, ParamStore<T>& params, const NetConfig& cfg,
                                        typename Graph<T>::Var rgb, typename Graph<T>::Var alpha_var,
                                        const std::vector<T>& alpha, bool trainable) {
  const auto x = graph.concat(rgb, alpha_var);
  const auto raw = unet_forward(graph, params, kSpecShadowPrefix, cfg, x, trainable);
  return graph.mask(graph.sigmoid_clamp(raw, 1.0f, 0.0f), alpha);
}

template <class T>
typename Graph<T>::Var diffusion_graph(Graph<T>& graph, ParamStore<T>& params, const std::string& prefix,
                                       const NetConfig& cfg, typename Graph<T>::Var rgb,
                                       typename Graph<T>::Var alpha_var, typename Graph<T>::Var maps, double t,
                                       bool trainable) {
  const Shape s = graph.shape(rgb);
  const auto tchan = graph.input({1, s.h, s.w}, std::vector<T>(s.plane(), static_cast<T>(t)));
  const auto x = graph.concat(graph.concat(graph.concat(rgb, alpha_var), maps), tchan);
  const auto z = unet_forward(graph, params, prefix, cfg, x, trainable);
  return graph.softplus_residual(z, rgb);
}

std::string diffusion_prefix_for_albedo(const ModelParams& params) {
  return params.has_prefix(kAlbedoPrefix) ? kAlbedoPrefix : kDiffusionPrefix;
}

void require_t(double t) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::kParameter, "diffusion parameter t must lie in [0, 1]");
}

ModelParams& writable(const ModelParams& params) {
  // Graphs built with trainable = false only read parameter values.
  return const_cast<ModelParams&>(params);
}

}  // namespace

// --------------------------------------------------------------- NetConfig

NetConfig NetConfig::specshadow_default() { return {}; }

NetConfig NetConfig::diffusion_default() {
  NetConfig c;
  c.encoder = {16, 32, 64};
  c.bottleneck = 64;
  c.decoder = {64, 32, 16};
  c.in_channels = 7;
  c.out_channels = 3;
  return c;
}

void NetConfig::validate() const {
  require(!encoder.empty(), ErrorCode::kParameter, "network needs at least one encoder level");
  require(encoder.size() == decoder.size(), ErrorCode::kParameter, "encoder and decoder must have equal length");
  auto positive = [](int v) { return v >= 1; };
  require(std::all_of(encoder.begin(), encoder.end(), positive) && std::all_of(decoder.begin(), decoder.end(), positive) &&
              bottleneck >= 1 && in_channels >= 1 && out_channels >= 1,
          ErrorCode::kParameter, "all filter counts must be >= 1");
}

template <class T>
void init_unet(ParamStore<T>& params, const std::string& prefix, const NetConfig& config, std::mt19937_64& rng) {
  config.validate();
  const auto in = conv_inputs(config);
  const int d = config.depth();
  std::size_t k = 0;
  for (int i = 0; i < d; ++i)
    add_conv(params, prefix + "enc" + std::to_string(i), in[k++], config.encoder[static_cast<std::size_t>(i)], rng, false);
  add_conv(params, prefix + "mid", in[k++], config.bottleneck, rng, false);
  for (int i = 0; i < d; ++i)
    add_conv(params, prefix + "dec" + std::to_string(i), in[k++], config.decoder[static_cast<std::size_t>(i)], rng, false);
  add_conv(params, prefix + "head", in[k], config.out_channels, rng, true);
}

template <class T>
void init_tint_net(ParamStore<T>& params, const TintNetConfig& config, std::mt19937_64& rng) {
  require(config.filters >= 1 && config.crop >= 4, ErrorCode::kParameter, "invalid tint network configuration");
  add_conv(params, kTintPrefix + "c0", 4, config.filters, rng, false);
  add_conv(params, kTintPrefix + "c1", config.filters, config.filters, rng, false);
  add_conv(params, kTintPrefix + "c2", config.filters, config.filters, rng, false);
  params.add(kTintPrefix + "fc.w", {3, config.filters}, std::vector<T>(static_cast<std::size_t>(3 * config.filters), T(0)));
  params.add(kTintPrefix + "fc.b", {3}, std::vector<T>(3, T(0)));
}

template <class T>
typename Graph<T>::Var unet_forward(Graph<T>& graph, ParamStore<T>& params, const std::string& prefix,
                                    const NetConfig& config, typename Graph<T>::Var x, bool trainable) {
  const Shape s = graph.shape(x);
  if (s.c != config.in_channels)
    fail(ErrorCode::kShape, "network '" + prefix + "' expects " + std::to_string(config.in_channels) +
                                " input channels, got " + std::to_string(s.c));
  if (s.h % config.divisor() != 0 || s.w % config.divisor() != 0)
    fail(ErrorCode::kShape, "input " + nn::to_string(s) + " is not a multiple of " + std::to_string(config.divisor()));
  const int d = config.depth();
  std::vector<typename Graph<T>::Var> skips;
  auto cur = x;
  for (int i = 0; i < d; ++i) {
    cur = graph.leaky_relu(conv_layer(graph, params, prefix + "enc" + std::to_string(i), cur, trainable));
    skips.push_back(cur);
    cur = graph.blur_pool(cur);
  }
  cur = graph.leaky_relu(conv_layer(graph, params, prefix + "mid", cur, trainable));
  for (int i = 0; i < d; ++i) {
    cur = graph.upsample2x(cur);
    cur = graph.leaky_relu(conv_layer(graph, params, prefix + "dec" + std::to_string(i), cur, trainable));
    cur = graph.concat(cur, skips[static_cast<std::size_t>(d - 1 - i)]);
  }
  return conv_layer(graph, params, prefix + "head", cur, trainable);
}

template <class T>
typename Graph<T>::Var tint_forward(Graph<T>& graph, ParamStore<T>& params, const TintNetConfig& config,
                                    typename Graph<T>::Var x, bool trainable) {
  (void)config;
  auto cur = x;
  for (const char* name : {"c0", "c1", "c2"})
    cur = graph.leaky_relu(conv_layer(graph, params, kTintPrefix + name, cur, trainable));
  cur = graph.global_average(cur);
  auto& w = params.get(kTintPrefix + "fc.w");
  auto& b = params.get(kTintPrefix + "fc.b");
  cur = graph.linear(cur, graph.param(w, {w.dims[0], 1, w.dims[1]}, trainable), graph.param(b, {b.dims[0], 1, 1}, trainable));
  return graph.exp(cur);
}

NetConfig infer_net_config(const ModelParams& params, const std::string& prefix) {
  NetConfig c;
  c.encoder.clear();
  c.decoder.clear();
  for (int i = 0; params.contains(prefix + "enc" + std::to_string(i) + ".w"); ++i)
    c.encoder.push_back(params.get(prefix + "enc" + std::to_string(i) + ".w").dims.at(0));
  for (int i = 0; params.contains(prefix + "dec" + std::to_string(i) + ".w"); ++i)
    c.decoder.push_back(params.get(prefix + "dec" + std::to_string(i) + ".w").dims.at(0));
  if (c.encoder.empty()) fail(ErrorCode::kFormat, "parameters contain no network '" + prefix + "'");
  c.bottleneck = params.get(prefix + "mid.w").dims.at(0);
  c.in_channels = params.get(prefix + "enc0.w").dims.at(1) / 9;
  c.out_channels = params.get(prefix + "head.w").dims.at(0);
  c.validate();
  const auto in = conv_inputs(c);
  const int d = c.depth();
  std::vector<std::string> names;
  for (int i = 0; i < d; ++i) names.push_back("enc" + std::to_string(i));
  names.push_back("mid");
  for (int i = 0; i < d; ++i) names.push_back("dec" + std::to_string(i));
  names.push_back("head");
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& w = params.get(prefix + names[k] + ".w");
    if (w.dims.size() != 2 || w.dims[1] != in[k] * 9)
      fail(ErrorCode::kFormat, "tensor '" + prefix + names[k] + ".w' has inconsistent shape");
  }
  return c;
}

TintNetConfig infer_tint_config(const ModelParams& params) {
  TintNetConfig c;
  c.filters = params.get(kTintPrefix + "c0.w").dims.at(0);
  return c;
}

ModelParams init_model(const NetConfig& g, const NetConfig& h, const TintNetConfig& tint, std::uint64_t seed) {
  require(g.in_channels == 4 && g.out_channels == 2, ErrorCode::kParameter, "g must map 4 channels to 2");
  require(h.in_channels == 7 && h.out_channels == 3, ErrorCode::kParameter, "h must map 7 channels to 3");
  std::mt19937_64 rng(seed);
  ModelParams p;
  init_unet(p, kSpecShadowPrefix, g, rng);
  init_unet(p, kDiffusionPrefix, h, rng);
  init_tint_net(p, tint, rng);
  return p;
}

// ------------------------------------------------------------- conversions

std::vector<float> to_chw(const ImageBuffer& image, bool with_alpha) {
  const std::size_t n = image.pixel_count();
  std::vector<float> out((with_alpha ? 4 : 3) * n);
  const auto rgb = image.rgb_data();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[c * n + p] = rgb[3 * p + c];
  if (with_alpha) std::copy(image.alpha_data().begin(), image.alpha_data().end(), out.begin() + static_cast<std::ptrdiff_t>(3 * n));
  return out;
}

ImageBuffer from_chw(std::span<const float> chw, int width, int height, const GrayImage& alpha) {
  ImageBuffer out(width, height);
  const std::size_t n = out.pixel_count();
  require(chw.size() >= 3 * n, ErrorCode::kShape, "tensor too small for image");
  auto rgb = out.rgb_data();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) rgb[3 * p + c] = chw[c * n + p];
  out.set_alpha(alpha);
  return out;
}

// --------------------------------------------------------------- inference

SpecShadowPair forward_specshadow(const ModelParams& params, const ImageBuffer& image) {
  const NetConfig cfg = infer_net_config(params, kSpecShadowPrefix);
  require_divisible(image, cfg);
  const int w = image.width(), h = image.height();
  const auto alpha = image.alpha_image();
  const auto av = plane_of<float>(alpha);
  Graph<float> g;
  const auto rgb = g.input({3, h, w}, to_chw(image, false));
  const auto a = g.input({1, h, w}, av);
  const auto out = specshadow_graph(g, writable(params), cfg, rgb, a, av, false);
  SpecShadowPair pair{GrayImage(w, h), GrayImage(w, h)};
  const auto& v = g.value(out);
  const std::size_t n = image.pixel_count();
  std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), pair.specular.data().begin());
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), pair.shadow.data().begin());
  return pair;
}

ImageBuffer forward_diffusion(const ModelParams& params, const ImageBuffer& image, const SpecShadowPair& maps, double t,
                              const std::string& prefix) {
  require_t(t);
  require(image.same_size(maps.specular) && image.same_size(maps.shadow), ErrorCode::kDimensionMismatch,
          "maps must match the image");
  const NetConfig cfg = infer_net_config(params, prefix);
  require_divisible(image, cfg);
  const int w = image.width(), h = image.height();
  const auto alpha = image.alpha_image();
  Graph<float> g;
  const auto rgb = g.input({3, h, w}, to_chw(image, false));
  const auto a = g.input({1, h, w}, plane_of<float>(alpha));
  const auto s = plane_of<float>(maps.specular);
  const auto d = plane_of<float>(maps.shadow);
  const auto sd = g.input({2, h, w}, concat_vec<float>({&s, &d}));
  const auto out = diffusion_graph(g, writable(params), prefix, cfg, rgb, a, sd, t, false);
  return from_chw(g.value(out), w, h, alpha);
}

ImageBuffer diffuse(const ModelParams& params, const ImageBuffer& image, double t) {
  require_t(t);
  const auto maps = forward_specshadow(params, image);
  const auto out = forward_diffusion(params, image, maps, t);
  return composite(out, image.alpha_image(), image);
}

ImageBuffer iterated_albedo(const ModelParams& params, const ImageBuffer& image, int iterations) {
  require(iterations >= 1, ErrorCode::kParameter, "iteration count must be >= 1");
  const std::string prefix = diffusion_prefix_for_albedo(params);
  ImageBuffer cur = image;
  for (int k = 0; k < iterations; ++k) {
    const auto maps = forward_specshadow(params, cur);
    cur = composite(forward_diffusion(params, cur, maps, 0.0, prefix), image.alpha_image(), image);
  }
  return cur;
}

std::vector<float> tint_input(const ImageBuffer& tinted_albedo, const GrayImage& skin_mask, int crop) {
  require(tinted_albedo.same_size(skin_mask), ErrorCode::kDimensionMismatch, "skin mask must match the image");
  int x0 = tinted_albedo.width(), y0 = tinted_albedo.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < skin_mask.height(); ++y)
    for (int x = 0; x < skin_mask.width(); ++x)
      if (skin_mask.at(x, y) > 0.5f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) fail(ErrorCode::kEmptyRegion, "skin mask is empty");
  const int cw = x1 - x0 + 1, ch = y1 - y0 + 1;
  ImageBuffer box(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const float m = skin_mask.at(x0 + x, y0 + y) > 0.5f ? 1.0f : 0.0f;
      box.set_rgb(x, y, tinted_albedo.rgb(x0 + x, y0 + y) * m);
      box.alpha(x, y) = m;
    }
  const ImageBuffer small = resize_bilinear(box, crop, crop);
  double lum = 0.0, wsum = 0.0;
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const Rgb c = small.rgb(x, y);
      lum += luminance_unchecked(c.r, c.g, c.b);
      wsum += small.alpha(x, y);
    }
  if (!(lum > 0.0) || !(wsum > 0.0)) fail(ErrorCode::kEmptyRegion, "skin region has no luminance");
  const double norm = wsum / lum;
  auto out = to_chw(small, true);
  const std::size_t n = static_cast<std::size_t>(crop) * crop;
  for (std::size_t i = 0; i < 3 * n; ++i) out[i] = static_cast<float>(out[i] * norm);
  return out;
}

Rgb estimate_tint(const ModelParams& params, const ImageBuffer& tinted_albedo, const GrayImage& skin_mask) {
  const TintNetConfig cfg = infer_tint_config(params);
  Graph<float> g;
  const auto x = g.input({4, cfg.crop, cfg.crop}, tint_input(tinted_albedo, skin_mask, cfg.crop));
  const auto out = tint_forward(g, writable(params), cfg, x, false);
  const auto& v = g.value(out);
  const Rgb tint{v[0], v[1], v[2]};
  return tint * (1.0 / luminance(tint));
}

ImageBuffer untint(const ImageBuffer& tinted_albedo, const Rgb& tint) {
  if (!(tint.r > 1e-3 && tint.g > 1e-3 && tint.b > 1e-3)) fail(ErrorCode::kDegenerateTint, "tint component <= 1e-3");
  ImageBuffer out = tinted_albedo;
  auto rgb = out.rgb_data();
  for (std::size_t p = 0; p < out.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c)
      rgb[3 * p + static_cast<std::size_t>(c)] =
          static_cast<float>(std::clamp(rgb[3 * p + static_cast<std::size_t>(c)] / tint[c], 0.0, 4.0));
  return out;
}

double loss(const ImageBuffer& pred, const ImageBuffer& target, const GrayImage& alpha) {
  require(pred.same_size(target) && pred.same_size(alpha), ErrorCode::kDimensionMismatch, "loss buffers must align");
  double wsum = 0.0, sum = 0.0;
  const auto a = pred.rgb_data();
  const auto b = target.rgb_data();
  for (std::size_t p = 0; p < alpha.size(); ++p) {
    wsum += alpha[p];
    for (std::size_t c = 0; c < 3; ++c) sum += alpha[p] * std::abs(static_cast<double>(a[3 * p + c]) - b[3 * p + c]);
  }
  if (!(wsum > 0.0)) fail(ErrorCode::kEmptyRegion, "loss mask is empty");
  return sum / (3.0 * wsum);
}

// ---------------------------------------------------------------- training

namespace {

struct Prepared {
  int w = 0, h = 0;
  std::vector<float> rgb;    // 3 planes
  std::vector<float> alpha;  // 1 plane
  std::vector<float> sd;     // ground-truth S, D
  std::vector<float> target;
  std::vector<float> tinted_albedo;
  double t = 0.0;
};

Prepared prepare(const TrainingExample& e) {
  require(e.input.same_size(e.specular) && e.input.same_size(e.shadow) && e.input.same_size(e.target) &&
              e.input.same_size(e.tinted_albedo),
          ErrorCode::kDimensionMismatch, "training example buffers must align");
  require(e.t >= 0.0 && e.t <= 1.0, ErrorCode::kParameter, "training example t outside [0, 1]");
  Prepared p;
  p.w = e.input.width();
  p.h = e.input.height();
  p.rgb = to_chw(e.input, false);
  p.alpha = plane_of<float>(e.input.alpha_image());
  const auto s = plane_of<float>(e.specular);
  const auto d = plane_of<float>(e.shadow);
  p.sd = concat_vec<float>({&s, &d});
  p.target = to_chw(e.target, false);
  p.tinted_albedo = to_chw(e.tinted_albedo, false);
  p.t = e.t;
  return p;
}

double learning_rate(const TrainConfig& c, int step, int steps) {
  if (c.schedule == LrSchedule::kConstant || steps <= 1) return c.learning_rate;
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * step / static_cast<double>(steps)));
}

class StageRunner {
 public:
  StageRunner(const TrainConfig& config, std::vector<TrainStep>& history, const TrainProgress& progress)
      : config_(config), history_(history), progress_(progress) {}

  // Runs `steps` Adam updates on the parameters under `prefix`. `example_loss`
  // builds the loss for one example index into the graph.
  template <class F>
  void run(const std::string& stage, ModelParams& params, const std::string& prefix, int steps, std::size_t count,
           std::uint64_t salt, F&& example_loss) {
    if (steps <= 0) return;
    require(count > 0, ErrorCode::kPrecondition, "training set is empty");
    nn::Adam<float> opt({config_.learning_rate, config_.beta1, config_.beta2, config_.epsilon});
    std::mt19937_64 rng(config_.seed * 0x9E3779B97F4A7C15ULL + salt);
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    const int batch = config_.batch_size;
    double window = 0.0;
    params.zero_grad();
    for (int step = 0; step < steps; ++step) {
      double total = 0.0;
      for (int b = 0; b < batch; ++b) {
        const std::size_t idx = pick(rng);
        Graph<float> g;
        const auto l = example_loss(g, idx);
        const double lv = g.value(l)[0];
        if (!std::isfinite(lv))
          fail(ErrorCode::kDivergence, "stage '" + stage + "' diverged at step " + std::to_string(step) +
                                           " (example " + std::to_string(idx) + ")");
        total += lv;
        g.backward(g.scale(l, 1.0f / static_cast<float>(batch)));
      }
      opt.step(params, prefix, learning_rate(config_, step, steps));
      const TrainStep rec{stage, global_++, total / batch};
      history_.push_back(rec);
      if (progress_) progress_(rec);
      window += rec.loss;
      if (config_.log_every > 0 && (step + 1) % config_.log_every == 0) {
        spdlog::info("{} step {}/{} loss {:.5f}", stage, step + 1, steps, window / config_.log_every);
        window = 0.0;
      }
    }
  }

 private:
  const TrainConfig& config_;
  std::vector<TrainStep>& history_;
  const TrainProgress& progress_;
  long long global_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kParameter, "learning_rate must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::kParameter, "betas must lie in [0, 1)");
  require(epsilon > 0.0, ErrorCode::kParameter, "epsilon must be > 0");
  require(batch_size >= 1, ErrorCode::kParameter, "batch_size must be >= 1");
  require(steps_g >= 0 && steps_h >= 0 && steps_albedo >= 0 && steps_tint >= 0, ErrorCode::kParameter,
          "step counts must be >= 0");
  require(albedo_iters >= 1, ErrorCode::kParameter, "albedo_iters must be >= 1");
  g.validate();
  h.validate();
  require(g.in_channels == 4 && g.out_channels == 2, ErrorCode::kParameter, "g must map 4 channels to 2");
  require(h.in_channels == 7 && h.out_channels == 3, ErrorCode::kParameter, "h must map 7 channels to 3");
  require(tint.filters >= 1 && tint.crop >= 4, ErrorCode::kParameter, "invalid tint network configuration");
}

TrainResult train(const std::vector<TrainingExample>& data, const TrainConfig& config, const ModelParams* init,
                  const TrainProgress& progress) {
  config.validate();
  require(!data.empty(), ErrorCode::kPrecondition, "training set is empty");
  TrainResult result;
  result.params = init ? *init : init_model(config.g, config.h, config.tint, config.seed);
  ModelParams& params = result.params;
  const NetConfig gcfg = infer_net_config(params, kSpecShadowPrefix);
  const NetConfig hcfg = infer_net_config(params, kDiffusionPrefix);

  std::vector<Prepared> prep;
  prep.reserve(data.size());
  for (const auto& e : data) {
    prep.push_back(prepare(e));
    if (prep.back().w % hcfg.divisor() != 0 || prep.back().h % hcfg.divisor() != 0 ||
        prep.back().w % gcfg.divisor() != 0 || prep.back().h % gcfg.divisor() != 0)
      fail(ErrorCode::kShape, "training images must be multiples of the network divisor");
  }
  StageRunner runner(config, result.history, progress);

  runner.run("g", params, kSpecShadowPrefix, config.steps_g, prep.size(), 1, [&](Graph<float>& g, std::size_t i) {
    const Prepared& p = prep[i];
    const auto rgb = g.input({3, p.h, p.w}, p.rgb);
    const auto a = g.input({1, p.h, p.w}, p.alpha);
    const auto sd = specshadow_graph(g, params, gcfg, rgb, a, p.alpha, true);
    return g.masked_l1(sd, p.sd, p.alpha);
  });

  if (config.steps_h > 0 || config.steps_tint > 0 || config.steps_albedo > 0) {
    // Frozen g predictions feed the diffusion stage.
    std::vector<std::vector<float>> sd_hat(prep.size());
    for (std::size_t i = 0; i < prep.size(); ++i) {
      const auto maps = forward_specshadow(params, data[i].input);
      const auto s = plane_of<float>(maps.specular);
      const auto d = plane_of<float>(maps.shadow);
      sd_hat[i] = concat_vec<float>({&s, &d});
    }
    runner.run("h", params, kDiffusionPrefix, config.steps_h, prep.size(), 2, [&](Graph<float>& g, std::size_t i) {
      const Prepared& p = prep[i];
      const auto rgb = g.input({3, p.h, p.w}, p.rgb);
      const auto a = g.input({1, p.h, p.w}, p.alpha);
      const auto sd = g.input({2, p.h, p.w}, sd_hat[i]);
      const auto out = diffusion_graph(g, params, kDiffusionPrefix, hcfg, rgb, a, sd, p.t, true);
      return g.masked_l1(out, p.target, p.alpha);
    });
  }

  if (config.steps_albedo > 0) {
    if (!params.has_prefix(kAlbedoPrefix)) params.copy_prefix(kDiffusionPrefix, kAlbedoPrefix);
    const NetConfig acfg = infer_net_config(params, kAlbedoPrefix);
    runner.run("albedo", params, kAlbedoPrefix, config.steps_albedo, prep.size(), 3, [&](Graph<float>& g, std::size_t i) {
      const Prepared& p = prep[i];
      const auto input = g.input({3, p.h, p.w}, p.rgb);
      const auto a = g.input({1, p.h, p.w}, p.alpha);
      auto cur = input;
      for (int k = 0; k < config.albedo_iters; ++k) {
        const auto sd = specshadow_graph(g, params, gcfg, cur, a, p.alpha, false);
        const auto out = diffusion_graph(g, params, kAlbedoPrefix, acfg, cur, a, sd, 0.0, true);
        cur = g.mask_mix(out, input, p.alpha);
      }
      return g.masked_l1(cur, p.tinted_albedo, p.alpha);
    });
  }

  if (config.steps_tint > 0) {
    const TintNetConfig tcfg = infer_tint_config(params);
    std::vector<std::vector<float>> crops;
    std::vector<std::vector<float>> tints;
    const bool have_diffusion = params.has_prefix(kDiffusionPrefix) && (config.steps_h > 0 || init != nullptr);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& e = data[i];
      const std::vector<float> gt{static_cast<float>(e.tint.r), static_cast<float>(e.tint.g), static_cast<float>(e.tint.b)};
      try {
        crops.push_back(tint_input(e.tinted_albedo, e.skin_mask, tcfg.crop));
        tints.push_back(gt);
        if (have_diffusion) {
          crops.push_back(tint_input(iterated_albedo(params, e.input, config.albedo_iters), e.skin_mask, tcfg.crop));
          tints.push_back(gt);
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::kEmptyRegion) throw;
      }
    }
    const std::vector<float> one{1.0f};
    runner.run("tint", params, kTintPrefix, config.steps_tint, crops.size(), 4, [&](Graph<float>& g, std::size_t i) {
      const auto x = g.input({4, tcfg.crop, tcfg.crop}, crops[i]);
      return g.masked_l1(tint_forward(g, params, tcfg, x, true), tints[i], one);
    });
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<TrainStep>& history) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f << "step,loss\n";
  char buf[64];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", s.step, s.loss);
    f << buf;
  }
  if (!f) fail(ErrorCode::kIo, "failed writing " + path.string());
}

// ------------------------------------------------------------ train config

TrainConfig parse_train_config(const std::string& text) {
  using kv::number;
  TrainConfig c;
  for (const auto& [k, v] : kv::parse(text)) {
    if (k == "seed") c.seed = number<std::uint64_t>(k, v);
    else if (k == "learning_rate") c.learning_rate = number<double>(k, v);
    else if (k == "beta1") c.beta1 = number<double>(k, v);
    else if (k == "beta2") c.beta2 = number<double>(k, v);
    else if (k == "epsilon") c.epsilon = number<double>(k, v);
    else if (k == "schedule") {
      if (v == "constant") c.schedule = LrSchedule::kConstant;
      else if (v == "cosine") c.schedule = LrSchedule::kCosine;
      else fail(ErrorCode::kParameter, "schedule must be constant or cosine");
    } else if (k == "batch_size") c.batch_size = number<int>(k, v);
    else if (k == "steps_g") c.steps_g = number<int>(k, v);
    else if (k == "steps_h") c.steps_h = number<int>(k, v);
    else if (k == "steps_albedo") c.steps_albedo = number<int>(k, v);
    else if (k == "steps_tint") c.steps_tint = number<int>(k, v);
    else if (k == "albedo_iters") c.albedo_iters = number<int>(k, v);
    else if (k == "log_every") c.log_every = number<int>(k, v);
    else if (k == "g_encoder") c.g.encoder = kv::int_list(k, v);
    else if (k == "g_bottleneck") c.g.bottleneck = number<int>(k, v);
    else if (k == "g_decoder") c.g.decoder = kv::int_list(k, v);
    else if (k == "h_encoder") c.h.encoder = kv::int_list(k, v);
    else if (k == "h_bottleneck") c.h.bottleneck = number<int>(k, v);
    else if (k == "h_decoder") c.h.decoder = kv::int_list(k, v);
    else if (k == "tint_filters") c.tint.filters = number<int>(k, v);
    else fail(ErrorCode::kParameter, "unknown training key '" + k + "'");
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) { return parse_train_config(kv::read_file(path)); }

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "seed=" << c.seed << "\n"
    << "learning_rate=" << c.learning_rate << "\n"
    << "beta1=" << c.beta1 << "\n"
    << "beta2=" << c.beta2 << "\n"
    << "epsilon=" << c.epsilon << "\n"
    << "schedule=" << (c.schedule == LrSchedule::kCosine ? "cosine" : "constant") << "\n"
    << "batch_size=" << c.batch_size << "\n"
    << "steps_g=" << c.steps_g << "\n"
    << "steps_h=" << c.steps_h << "\n"
    << "steps_albedo=" << c.steps_albedo << "\n"
    << "steps_tint=" << c.steps_tint << "\n"
    << "albedo_iters=" << c.albedo_iters << "\n"
    << "log_every=" << c.log_every << "\n"
    << "g_encoder=" << kv::join(c.g.encoder) << "\n"
    << "g_bottleneck=" << c.g.bottleneck << "\n"
    << "g_decoder=" << kv::join(c.g.decoder) << "\n"
    << "h_encoder=" << kv::join(c.h.encoder) << "\n"
    << "h_bottleneck=" << c.h.bottleneck << "\n"
    << "h_decoder=" << kv::join(c.h.decoder) << "\n"
    << "tint_filters=" << c.tint.filters << "\n";
  return o.str();
}

// ---------------------------------------------------------- params binary

namespace {

constexpr char kMagic[4] = {'L', 'D', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kFormat, "truncated parameter file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const ModelParams& params) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& p : params.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.dims.size()));
    for (int d : p.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.value) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ModelParams deserialize_params(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string(kMagic, 4)) fail(ErrorCode::kFormat, "not a parameter file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) fail(ErrorCode::kFormat, "unsupported parameter file version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  ModelParams out;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t nlen = r.u32();
    if (nlen == 0 || nlen > 4096) fail(ErrorCode::kFormat, "invalid tensor name length");
    std::string name = r.take(nlen);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) fail(ErrorCode::kFormat, "invalid tensor rank for '" + name + "'");
    std::vector<int> dims;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 24)) fail(ErrorCode::kFormat, "invalid dimension in '" + name + "'");
      dims.push_back(static_cast<int>(d));
      n *= d;
      if (n > (std::size_t{1} << 28)) fail(ErrorCode::kFormat, "tensor '" + name + "' too large");
    }
    std::vector<float> values(n);
    for (auto& v : values) {
      v = std::bit_cast<float>(r.u32());
      if (!std::isfinite(v)) fail(ErrorCode::kFormat, "non-finite value in '" + name + "'");
    }
    out.add(name, std::move(dims), std::move(values));
  }
  if (!r.done()) fail(ErrorCode::kFormat, "trailing bytes in parameter file");
  return out;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::kIo, "failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize_params(ss.str());
}

template void init_unet<float>(ParamStore<float>&, const std::string&, const NetConfig&, std::mt19937_64&);
template void init_unet<double>(ParamStore<double>&, const std::string&, const NetConfig&, std::mt19937_64&);
template void init_tint_net<float>(ParamStore<float>&, const TintNetConfig&, std::mt19937_64&);
template void init_tint_net<double>(ParamStore<double>&, const TintNetConfig&, std::mt19937_64&);
template Graph<float>::Var unet_forward<float>(Graph<float>&, ParamStore<float>&, const std::string&, const NetConfig&,
                                               Graph<float>::Var, bool);
template Graph<double>::Var unet_forward<double>(Graph<double>&, ParamStore<double>&, const std::string&,
                                                 const NetConfig&, Graph<double>::Var, bool);
template Graph<long double>::Var unet_forward<long double>(Graph<long double>&, ParamStore<long double>&,
                                                           const std::string&, const NetConfig&,
                                                           Graph<long double>::Var, bool);
template Graph<float>::Var tint_forward<float>(Graph<float>&, ParamStore<float>&, const TintNetConfig&,
                                               Graph<float>::Var, bool);
template Graph<double>::Var tint_forward<double>(Graph<double>&, ParamStore<double>&, const TintNetConfig&,
                                                 Graph<double>::Var, bool);

}  // namespace lightdiff
