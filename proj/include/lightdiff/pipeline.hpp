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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lightdiff/envmap.hpp"
#include "lightdiff/image.hpp"
#include "lightdiff/model.hpp"
#include "lightdiff/renderer.hpp"
#include "lightdiff/shadowaug.hpp"

namespace lightdiff {

/// Key=value dataset configuration.
struct DatasetConfig {
  int train_count = 400;
  int eval_count = 50;
  int width = 64;
  int height = 64;
  double aug_probability = 0.5;
  double tint_probability = 0.5;  // of the augmented examples
  double bust_probability = 0.75;
  double exposure = 0.35;  // mean subject luminance after normalization
  int env_height = 16;
  int min_lobes = 1;
  int max_lobes = 3;
  double ambient_min = 0.02;
  double ambient_max = 0.3;
  int max_env_attempts = 16;
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

DatasetConfig parse_dataset_config(const std::string& text);
DatasetConfig read_dataset_config(const std::filesystem::path& path);
std::string format_dataset_config(const DatasetConfig& config);

enum class Split { kTrain, kEval };
const char* to_string(Split split);
Split parse_split(const std::string& s);

struct AugmentationRecord {
  SilhouetteKind silhouette = SilhouetteKind::kBars;
  std::uint64_t silhouette_seed = 0;
  Vec3 light_direction;
  double gini = 0.0;
  double cone_half_angle_deg = 20.0;
  double sigma = 0.0;
  double opacity = 0.0;
  bool tint = false;
};

/// Everything needed to rebuild one example bit for bit.
struct ExampleRecord {
  std::string id;
  Split split = Split::kTrain;
  int index = 0;
  SceneSpec scene;
  std::uint64_t scene_seed = 0;
  ProceduralEnvSpec env;
  std::uint64_t env_seed = 0;
  int env_attempts = 1;
  double exposure_scale = 1.0;
  std::optional<AugmentationRecord> augmentation;
  double t = 0.0;
  std::optional<double> n;  // absent: target uses the original map
  double gini_source = 0.0;
  double gini_diffuse = 0.0;
  double gini_target = 0.0;
  Rgb tint;
  std::map<std::string, std::string> files;  // buffer name -> path relative to the dataset root
};

struct ExampleBuffers {
  ImageBuffer image;        // network input (augmented when the record says so)
  ImageBuffer image_clean;  // render under the original map
  GrayImage alpha;
  GrayImage skin;
  ImageBuffer albedo;
  ImageBuffer tinted_albedo;
  ImageBuffer diffuse;  // n = 1
  ImageBuffer target;
  SpecShadowPair maps;
  SpecShadowPair maps_clean;
};

/// The exposure-normalized environment of a record.
EnvironmentMap record_environment(const ExampleRecord& record);

/// Draws scene, lighting, augmentation and t for one example and renders it.
/// Degenerate lighting is redrawn from the next sub-seed; kDegenerateLighting
/// once max_env_attempts is exhausted.
ExampleRecord sample_example(const DatasetConfig& config, std::uint64_t seed, Split split, int index,
                             ExampleBuffers* buffers = nullptr);

/// Rebuilds the buffers from the stored parameters alone.
ExampleBuffers realize_example(const ExampleRecord& record, Resolution resolution, int env_height);

/// Exponent whose convolved-map Gini equals g_target, by bisection over
/// log n in [0, log 4096]. Empty when g_target is at or above G(4096).
std::optional<double> exponent_for_gini(const EnvironmentMap& grid, double g_target);

struct DatasetManifest {
  std::uint64_t seed = 0;
  DatasetConfig config;
  std::vector<ExampleRecord> records;
};

/// Generates both splits under out_dir, writes every buffer as PFM and the
/// manifest as out_dir/manifest.json.
DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

void write_example_files(const std::filesystem::path& root, const ExampleRecord& record, const ExampleBuffers& buffers);
ExampleBuffers read_example_files(const std::filesystem::path& root, const ExampleRecord& record);

/// kAugmented uses the (possibly) shadowed input, kClean the unaugmented one.
enum class InputVariant { kAugmented, kClean };

TrainingExample to_training_example(const ExampleRecord& record, const ExampleBuffers& buffers, InputVariant variant);

/// Training examples of one split read from disk. `only_augmented` keeps the
/// records that carry augmentation.
std::vector<TrainingExample> load_examples(const DatasetManifest& manifest, const std::filesystem::path& root,
                                           Split split, InputVariant variant, bool only_augmented = false);

// JSON helpers shared with the command-line tool.
std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);
std::string env_spec_to_json(const ProceduralEnvSpec& spec);
ProceduralEnvSpec env_spec_from_json(const std::string& text);

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
};

/// MAE and MSE over RGB of alpha > 0 pixels; SSIM on luminance clamped to
/// [0, 1] with an 11x11 Gaussian window (sigma 1.5), averaged over alpha > 0.
/// Throws kDimensionMismatch or kEmptyRegion.
Metrics compute_metrics(const ImageBuffer& pred, const ImageBuffer& gt, const GrayImage& alpha);
double ssim(const GrayImage& a, const GrayImage& b, const GrayImage& alpha);

struct MetricsRow {
  std::string id;
  std::string method;
  Metrics metrics;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  /// Per-method means in first-appearance order.
  std::vector<MetricsRow> summary() const;
  std::string to_csv() const;
  std::string to_table() const;
};

struct EvalOptions {
  // false: t = 0 against the n = 1 render; true: each record's t and target.
  bool record_t = false;
  int albedo_iters = 3;
  bool only_augmented = false;
};

/// Eval-split methods: "diffusion" (g then h), "identity" (the input itself)
/// and, when albedo weights are present, "albedo" (iterated albedo against
/// the tinted albedo).
MetricsReport evaluate(const ModelParams& params, const DatasetManifest& manifest, const std::filesystem::path& root,
                       const EvalOptions& options = {});

}  // namespace lightdiff
