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
#include <filesystem>
#include <functional>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "lightdiff/image.hpp"
#include "lightdiff/maps.hpp"
#include "lightdiff/nn.hpp"
#include "lightdiff/types.hpp"

namespace lightdiff {

/// U-shaped network: one 3x3 conv + leaky ReLU per encoder level followed by
/// blur-pool, a bottleneck conv, then per decoder level bilinear 2x upsampling,
/// conv + leaky ReLU and concatenation with the matching encoder output, and a
/// final 3x3 head conv.
struct NetConfig {
  std::vector<int> encoder{8, 16, 32};
  int bottleneck = 32;
  std::vector<int> decoder{32, 16, 8};
  int in_channels = 4;
  int out_channels = 2;

  static NetConfig specshadow_default();
  static NetConfig diffusion_default();

  void validate() const;
  int depth() const { return static_cast<int>(encoder.size()); }
  /// Spatial sizes must be multiples of this.
  int divisor() const { return 1 << depth(); }
  bool operator==(const NetConfig&) const = default;
};

struct TintNetConfig {
  int filters = 16;
  int crop = 16;
  bool operator==(const TintNetConfig&) const = default;
};

/// All learned weights, keyed by network prefix: "g." spec/shadow, "h." diffusion,
/// "a." albedo-tuned diffusion, "tint." tint regressor.
using ModelParams = nn::ParamStore<float>;

inline const std::string kSpecShadowPrefix = "g.";
inline const std::string kDiffusionPrefix = "h.";
inline const std::string kAlbedoPrefix = "a.";
inline const std::string kTintPrefix = "tint.";

/// Fan-in scaled uniform weights, zero biases, zero head.
template <class T>
void init_unet(nn::ParamStore<T>& params, const std::string& prefix, const NetConfig& config, std::mt19937_64& rng);
template <class T>
void init_tint_net(nn::ParamStore<T>& params, const TintNetConfig& config, std::mt19937_64& rng);

/// Network body up to (not including) the output activation.
template <class T>
typename nn::Graph<T>::Var unet_forward(nn::Graph<T>& graph, nn::ParamStore<T>& params, const std::string& prefix,
                                        const NetConfig& config, typename nn::Graph<T>::Var x, bool trainable);
template <class T>
typename nn::Graph<T>::Var tint_forward(nn::Graph<T>& graph, nn::ParamStore<T>& params, const TintNetConfig& config,
                                        typename nn::Graph<T>::Var x, bool trainable);

/// Reads the architecture back from tensor shapes.
NetConfig infer_net_config(const ModelParams& params, const std::string& prefix);
TintNetConfig infer_tint_config(const ModelParams& params);

ModelParams init_model(const NetConfig& g, const NetConfig& h, const TintNetConfig& tint, std::uint64_t seed);

/// (S, D) prediction through a logistic head, zero off the matte. A zero
/// head therefore gives 0.5 everywhere.
SpecShadowPair forward_specshadow(const ModelParams& params, const ImageBuffer& image);

/// Diffused image at t in [0, 1]; t enters as a constant seventh channel.
/// Output is softplus(z + softplus^-1(max(I, 1e-3))), the input at z = 0.
/// Alpha is copied from the input.
ImageBuffer forward_diffusion(const ModelParams& params, const ImageBuffer& image, const SpecShadowPair& maps, double t,
                              const std::string& prefix = kDiffusionPrefix);

/// g then h, composited over the input through its alpha.
ImageBuffer diffuse(const ModelParams& params, const ImageBuffer& image, double t);

/// N rounds of g then h at t = 0 starting from the input. Uses the
/// albedo-tuned weights when present.
ImageBuffer iterated_albedo(const ModelParams& params, const ImageBuffer& image, int iterations = 3);

/// Tint-network input: skin bounding-box crop resized to crop x crop, RGB
/// multiplied by the skin mask and divided by its mean skin luminance, plus the
/// mask as a fourth channel. Throws kEmptyRegion without skin.
std::vector<float> tint_input(const ImageBuffer& tinted_albedo, const GrayImage& skin_mask, int crop);

/// Predicted environment tint, normalized to unit luminance.
Rgb estimate_tint(const ModelParams& params, const ImageBuffer& tinted_albedo, const GrayImage& skin_mask);

/// Channelwise division clamped to [0, 4]. Throws kDegenerateTint when any component is <= 1e-3.
ImageBuffer untint(const ImageBuffer& tinted_albedo, const Rgb& tint);

/// Alpha-weighted mean absolute error averaged over RGB. Throws kEmptyRegion if sum alpha = 0.
double loss(const ImageBuffer& pred, const ImageBuffer& target, const GrayImage& alpha);

/// CHW float layout: RGB, then alpha when `with_alpha`.
std::vector<float> to_chw(const ImageBuffer& image, bool with_alpha);
ImageBuffer from_chw(std::span<const float> chw, int width, int height, const GrayImage& alpha);

struct TrainingExample {
  ImageBuffer input;  // includes alpha
  GrayImage specular;
  GrayImage shadow;
  ImageBuffer target;  // diffused render at t
  double t = 0.0;
  ImageBuffer tinted_albedo;
  Rgb tint;  // unit luminance
  ImageBuffer albedo;
  GrayImage skin_mask;
};

enum class LrSchedule { kConstant, kCosine };

/// Key=value training configuration. Stages with zero steps are skipped.
struct TrainConfig {
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LrSchedule schedule = LrSchedule::kConstant;
  int batch_size = 4;
  int steps_g = 1000;
  int steps_h = 2000;
  int steps_albedo = 0;
  int steps_tint = 0;
  int albedo_iters = 3;
  int log_every = 100;
  NetConfig g = NetConfig::specshadow_default();
  NetConfig h = NetConfig::diffusion_default();
  TintNetConfig tint;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

struct TrainStep {
  std::string stage;
  long long step = 0;  // global, across stages
  double loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainStep> history;
};

using TrainProgress = std::function<void(const TrainStep&)>;

/// Two-stage training: g on (I -> S, D), then h on (I, alpha, g(I), t -> target)
/// with g frozen. Optional stages fine-tune a copy of h on the iterated tinted
/// albedo and fit the tint regressor. `init` continues from existing weights.
/// Throws kDivergence on a non-finite loss.
TrainResult train(const std::vector<TrainingExample>& data, const TrainConfig& config, const ModelParams* init = nullptr,
                  const TrainProgress& progress = {});

void write_history_csv(const std::filesystem::path& path, const std::vector<TrainStep>& history);

/// Binary layout: "LDPM", u32 version, u32 count, then per tensor u32 name
/// length, name bytes, u32 rank, u32 dims, little-endian float32 values.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);
std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::string& bytes);

}  // namespace lightdiff
