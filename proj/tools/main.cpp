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

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lightdiff/envmap.hpp"
#include "lightdiff/error.hpp"
#include "lightdiff/imageio.hpp"
#include "lightdiff/keyvalue.hpp"
#include "lightdiff/maps.hpp"
#include "lightdiff/model.hpp"
#include "lightdiff/pipeline.hpp"
#include "lightdiff/renderer.hpp"

namespace fs = std::filesystem;
using namespace lightdiff;

namespace {

constexpr int kOk = 0;
constexpr int kInternalError = 1;
constexpr int kValidationError = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorCode::kIo, "write failed: " + path.string());
}

struct InputBundle {
  ImageBuffer image;
  GrayImage skin;
};

// image.pfm and alpha.pfm, plus skin.pfm when present.
InputBundle read_bundle(const fs::path& dir) {
  InputBundle b;
  b.image = io::read_image_pfm(dir / "image.pfm");
  const GrayImage alpha = io::read_gray_pfm(dir / "alpha.pfm");
  if (!b.image.same_size(alpha)) fail(ErrorCode::kDimensionMismatch, "alpha.pfm does not match image.pfm");
  b.image.set_alpha(alpha);
  if (fs::exists(dir / "skin.pfm")) b.skin = io::read_gray_pfm(dir / "skin.pfm");
  return b;
}

void write_image(const fs::path& out_dir, const std::string& stem, const ImageBuffer& img) {
  fs::create_directories(out_dir);
  io::write_pfm(out_dir / (stem + ".pfm"), img);
  io::write_png(out_dir / (stem + ".png"), img);
}

std::string decimal(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("lightdiff"));

  CLI::App app{"Portrait light diffusion toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // gen-env
  auto* gen_env = app.add_subcommand("gen-env", "Procedural environment map from a JSON spec");
  fs::path env_spec_path, env_out;
  std::uint64_t seed = 0;
  gen_env->add_option("--spec", env_spec_path, "Environment spec (JSON)")->required()->check(CLI::ExistingFile);
  gen_env->add_option("--seed", seed, "Noise seed")->required();
  gen_env->add_option("--out", env_out, "Output map (.pfm or .hdr)")->required();

  // gini
  auto* gini_cmd = app.add_subcommand("gini", "Gini coefficient of an environment map");
  fs::path gini_env;
  gini_cmd->add_option("env", gini_env, "Environment map (.pfm or .hdr)")->required()->check(CLI::ExistingFile);

  // convolve
  auto* convolve = app.add_subcommand("convolve", "Cosine-lobe prefiltering of an environment map");
  fs::path conv_in, conv_out;
  double conv_n = 1.0;
  int conv_height = 16;
  convolve->add_option("--env", conv_in, "Input map")->required()->check(CLI::ExistingFile);
  convolve->add_option("--n", conv_n, "Lobe exponent")->required();
  convolve->add_option("--out-height", conv_height, "Output height")->required();
  convolve->add_option("--out", conv_out, "Output map (.pfm or .hdr)")->required();

  // render
  auto* render = app.add_subcommand("render", "Render a synthetic subject under an environment map");
  fs::path scene_path, render_env_path, render_out;
  int render_w = 64, render_h = 64, render_env_height = 16;
  render->add_option("--scene-spec", scene_path, "Scene spec (JSON)")->required()->check(CLI::ExistingFile);
  render->add_option("--env", render_env_path, "Environment map")->required()->check(CLI::ExistingFile);
  render->add_option("--seed", seed, "Scene seed")->required();
  render->add_option("--width", render_w, "Image width");
  render->add_option("--height", render_h, "Image height");
  render->add_option("--env-height", render_env_height, "Integration grid height");
  render->add_option("--out-dir", render_out, "Output bundle directory")->required();

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Generate a training and evaluation dataset");
  fs::path dataset_config, dataset_out;
  dataset->add_option("--config", dataset_config, "Dataset config (key=value)")->check(CLI::ExistingFile);
  dataset->add_option("--seed", seed, "Dataset seed")->required();
  dataset->add_option("--out-dir", dataset_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the networks on a dataset");
  fs::path manifest_path, train_config, params_out, history_out, init_params;
  std::string variant = "augmented";
  std::optional<std::uint64_t> train_seed;
  train_cmd->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--config", train_config, "Training config (key=value)")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train_seed, "Overrides the config seed");
  train_cmd->add_option("--out-params", params_out, "Output parameter file")->required();
  train_cmd->add_option("--history", history_out, "Loss history CSV");
  train_cmd->add_option("--init", init_params, "Continue from these parameters")->check(CLI::ExistingFile);
  train_cmd->add_option("--inputs", variant, "augmented or clean")->check(CLI::IsMember({"augmented", "clean"}));

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate parameters on the eval split");
  fs::path eval_params, eval_csv;
  bool record_t = false, only_augmented = false;
  int eval_iters = 3;
  eval_cmd->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--params", eval_params, "Parameter file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_csv, "Report CSV");
  eval_cmd->add_flag("--record-t", record_t, "Evaluate each record at its own t");
  eval_cmd->add_flag("--only-augmented", only_augmented, "Restrict to shadow-augmented records");
  eval_cmd->add_option("--iters", eval_iters, "Albedo iterations");

  // diffuse
  auto* diffuse_cmd = app.add_subcommand("diffuse", "Diffuse the lighting of an input bundle");
  fs::path model_params, bundle_dir, out_dir;
  double t = 0.0;
  diffuse_cmd->add_option("--params", model_params, "Parameter file")->required()->check(CLI::ExistingFile);
  diffuse_cmd->add_option("--input-bundle", bundle_dir, "Directory with image.pfm and alpha.pfm")
      ->required()
      ->check(CLI::ExistingDirectory);
  diffuse_cmd->add_option("--t", t, "Diffusion parameter in [0, 1]")->required();
  diffuse_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  // albedo
  auto* albedo_cmd = app.add_subcommand("albedo", "Iterated-diffusion albedo of an input bundle");
  int iters = 3;
  albedo_cmd->add_option("--params", model_params, "Parameter file")->required()->check(CLI::ExistingFile);
  albedo_cmd->add_option("--input-bundle", bundle_dir, "Directory with image.pfm, alpha.pfm and skin.pfm")
      ->required()
      ->check(CLI::ExistingDirectory);
  albedo_cmd->add_option("--iters", iters, "Iterations");
  albedo_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*gen_env) {
      const auto spec = env_spec_from_json(kv::read_file(env_spec_path));
      io::write_env(env_out, gen_procedural_env(spec, seed));
    } else if (*gini_cmd) {
      std::cout << decimal(gini(io::read_env(gini_env))) << "\n";
    } else if (*convolve) {
      if (conv_height < 2) fail(ErrorCode::kParameter, "--out-height must be >= 2");
      if (conv_n < 0.0) fail(ErrorCode::kParameter, "--n must be >= 0");
      io::write_env(conv_out, diffuse_convolve(io::read_env(conv_in), conv_n, conv_height));
    } else if (*render) {
      const auto spec = scene_spec_from_json(kv::read_file(scene_path));
      if (render_w < 1 || render_h < 1) fail(ErrorCode::kParameter, "resolution must be positive");
      RenderOptions options;
      options.env_height = render_env_height;
      const Renderer renderer(build_scene(spec, seed), {render_w, render_h}, options);
      const auto bundle = renderer.render_env(io::read_env(render_env_path));
      write_image(render_out, "image", bundle.image);
      write_image(render_out, "albedo", bundle.albedo_gt);
      io::write_pfm(render_out / "alpha.pfm", bundle.image.alpha_image());
      io::write_png(render_out / "alpha.png", bundle.image.alpha_image());
      io::write_pfm(render_out / "skin.pfm", bundle.skin_mask);
      io::write_png(render_out / "skin.png", bundle.skin_mask);
      io::FloatRaster normals{render_w, render_h, 3, {}};
      for (const auto& n : bundle.normals) {
        normals.data.push_back(static_cast<float>(n.x));
        normals.data.push_back(static_cast<float>(n.y));
        normals.data.push_back(static_cast<float>(n.z));
      }
      io::write_pfm(render_out / "normals.pfm", normals);
    } else if (*dataset) {
      const DatasetConfig config = dataset_config.empty() ? DatasetConfig{} : read_dataset_config(dataset_config);
      const auto m = generate_dataset(config, seed, dataset_out);
      spdlog::info("wrote {} records to {}", m.records.size(), dataset_out.string());
    } else if (*train_cmd) {
      TrainConfig config = train_config.empty() ? TrainConfig{} : read_train_config(train_config);
      if (train_seed) config.seed = *train_seed;
      const auto manifest = read_manifest(manifest_path);
      const auto data = load_examples(manifest, manifest_path.parent_path(), Split::kTrain,
                                      variant == "clean" ? InputVariant::kClean : InputVariant::kAugmented);
      std::optional<ModelParams> init;
      if (!init_params.empty()) init = load_params(init_params);
      const auto result = train(data, config, init ? &*init : nullptr, [](const TrainStep& s) {
        spdlog::info("{} step {} loss {:.6f}", s.stage, s.step, s.loss);
      });
      if (params_out.has_parent_path()) fs::create_directories(params_out.parent_path());
      save_params(result.params, params_out);
      if (!history_out.empty()) {
        if (history_out.has_parent_path()) fs::create_directories(history_out.parent_path());
        write_history_csv(history_out, result.history);
      }
    } else if (*eval_cmd) {
      const auto manifest = read_manifest(manifest_path);
      EvalOptions options;
      options.record_t = record_t;
      options.only_augmented = only_augmented;
      options.albedo_iters = eval_iters;
      const auto report = evaluate(load_params(eval_params), manifest, manifest_path.parent_path(), options);
      if (!eval_csv.empty()) write_text(eval_csv, report.to_csv());
      else std::cout << report.to_csv() << "\n";
      std::cout << report.to_table();
    } else if (*diffuse_cmd) {
      const auto bundle = read_bundle(bundle_dir);
      write_image(out_dir, "diffused", diffuse(load_params(model_params), bundle.image, t));
    } else if (*albedo_cmd) {
      if (iters < 1) fail(ErrorCode::kParameter, "--iters must be >= 1");
      const auto params = load_params(model_params);
      const auto bundle = read_bundle(bundle_dir);
      const auto tinted = iterated_albedo(params, bundle.image, iters);
      write_image(out_dir, "tinted_albedo", tinted);
      if (params.has_prefix(kTintPrefix) && !bundle.skin.empty()) {
        const Rgb tint = estimate_tint(params, tinted, bundle.skin);
        write_image(out_dir, "albedo", untint(tinted, tint));
        std::cout << "tint " << decimal(tint.r) << " " << decimal(tint.g) << " " << decimal(tint.b) << "\n";
      }
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return is_validation(e.code()) ? kValidationError : kInternalError;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kInternalError;
  }
  return kOk;
}
