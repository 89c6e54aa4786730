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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lightdiff/envmap.hpp"
#include "lightdiff/error.hpp"
#include "lightdiff/maps.hpp"
#include "lightdiff/model.hpp"
#include "lightdiff/pipeline.hpp"
#include "lightdiff/renderer.hpp"

namespace py = pybind11;
using namespace lightdiff;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

void expect_rgb(const py::buffer_info& info, const char* what) {
  if (info.ndim != 3 || info.shape[2] != 3) fail(ErrorCode::kShape, std::string(what) + " must have shape (H, W, 3)");
}

EnvironmentMap env_from_array(const DoubleArray& a) {
  const auto info = a.request();
  expect_rgb(info, "environment map");
  const int h = static_cast<int>(info.shape[0]);
  const int w = static_cast<int>(info.shape[1]);
  EnvironmentMap env(w, h);
  const double* p = a.data();
  for (std::size_t i = 0; i < env.texel_count(); ++i) env[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
  return env;
}

DoubleArray env_to_array(const EnvironmentMap& env) {
  DoubleArray out({env.height(), env.width(), 3});
  double* p = out.mutable_data();
  for (std::size_t i = 0; i < env.texel_count(); ++i) {
    p[3 * i] = env[i].r;
    p[3 * i + 1] = env[i].g;
    p[3 * i + 2] = env[i].b;
  }
  return out;
}

GrayImage gray_from_array(const FloatArray& a) {
  const auto info = a.request();
  if (info.ndim != 2) fail(ErrorCode::kShape, "mask must have shape (H, W)");
  GrayImage g(static_cast<int>(info.shape[1]), static_cast<int>(info.shape[0]));
  std::copy(a.data(), a.data() + g.size(), g.data().begin());
  return g;
}

FloatArray gray_to_array(const GrayImage& g) {
  FloatArray out({g.height(), g.width()});
  std::copy(g.data().begin(), g.data().end(), out.mutable_data());
  return out;
}

ImageBuffer image_from_arrays(const FloatArray& rgb, const FloatArray& alpha) {
  const auto info = rgb.request();
  expect_rgb(info, "image");
  const GrayImage a = gray_from_array(alpha);
  ImageBuffer img(static_cast<int>(info.shape[1]), static_cast<int>(info.shape[0]));
  if (!img.same_size(a)) fail(ErrorCode::kDimensionMismatch, "alpha does not match the image");
  std::copy(rgb.data(), rgb.data() + img.rgb_data().size(), img.rgb_data().begin());
  img.set_alpha(a);
  return img;
}

FloatArray rgb_to_array(const ImageBuffer& img) {
  FloatArray out({img.height(), img.width(), 3});
  std::copy(img.rgb_data().begin(), img.rgb_data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Portrait light diffusion core";

  py::register_exception<Error>(m, "LightDiffError", PyExc_ValueError);

  m.def("gini", [](const DoubleArray& env) { return gini(env_from_array(env)); }, py::arg("env"),
        "Gini coefficient of an (H, W, 3) equirectangular map.");
  m.def(
      "diffuse_convolve",
      [](const DoubleArray& env, double n, int out_height) {
        return env_to_array(diffuse_convolve(env_from_array(env), n, out_height));
      },
      py::arg("env"), py::arg("n"), py::arg("out_height"));
  m.def(
      "gen_procedural_env",
      [](const std::string& spec_json, std::uint64_t seed) {
        return env_to_array(gen_procedural_env(env_spec_from_json(spec_json), seed));
      },
      py::arg("spec_json"), py::arg("seed"));
  m.def(
      "render",
      [](const std::string& scene_json, const DoubleArray& env, std::uint64_t seed, int width, int height) {
        const Renderer r(build_scene(scene_spec_from_json(scene_json), seed), {width, height});
        const auto b = r.render_env(env_from_array(env));
        py::dict out;
        out["image"] = rgb_to_array(b.image);
        out["alpha"] = gray_to_array(b.image.alpha_image());
        out["albedo"] = rgb_to_array(b.albedo_gt);
        out["skin"] = gray_to_array(b.skin_mask);
        return out;
      },
      py::arg("scene_json"), py::arg("env"), py::arg("seed"), py::arg("width") = 64, py::arg("height") = 64);
  m.def(
      "spec_shadow",
      [](const FloatArray& image, const FloatArray& diffuse, const FloatArray& alpha) {
        const auto p = compute_spec_shadow(image_from_arrays(image, alpha), image_from_arrays(diffuse, alpha),
                                           gray_from_array(alpha));
        return py::make_tuple(gray_to_array(p.specular), gray_to_array(p.shadow));
      },
      py::arg("image"), py::arg("diffuse"), py::arg("alpha"), "Specular and shadow maps (S, D).");
  m.def(
      "compute_metrics",
      [](const FloatArray& pred, const FloatArray& gt, const FloatArray& alpha) {
        const auto r = compute_metrics(image_from_arrays(pred, alpha), image_from_arrays(gt, alpha), gray_from_array(alpha));
        py::dict out;
        out["mae"] = r.mae;
        out["mse"] = r.mse;
        out["ssim"] = r.ssim;
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("alpha"));
  m.def(
      "generate_dataset",
      [](const std::string& config_text, std::uint64_t seed, const std::filesystem::path& out_dir) {
        py::gil_scoped_release release;
        return generate_dataset(parse_dataset_config(config_text), seed, out_dir).records.size();
      },
      py::arg("config"), py::arg("seed"), py::arg("out_dir"), "Writes a dataset; returns the record count.");

  py::class_<ModelParams>(m, "Params")
      .def_static("load", &load_params, py::arg("path"))
      .def_static(
          "init",
          [](const std::string& config_text, std::uint64_t seed) {
            const auto c = parse_train_config(config_text);
            return init_model(c.g, c.h, c.tint, seed);
          },
          py::arg("train_config") = "", py::arg("seed") = 0)
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_params(p, path); })
      .def("names",
           [](const ModelParams& p) {
             std::vector<std::string> names;
             for (const auto& t : p.params()) names.push_back(t.name);
             return names;
           })
      .def("__len__", [](const ModelParams& p) { return p.count(); })
      .def(
          "diffuse",
          [](const ModelParams& p, const FloatArray& image, const FloatArray& alpha, double t) {
            return rgb_to_array(diffuse(p, image_from_arrays(image, alpha), t));
          },
          py::arg("image"), py::arg("alpha"), py::arg("t"))
      .def(
          "iterated_albedo",
          [](const ModelParams& p, const FloatArray& image, const FloatArray& alpha, int iterations) {
            return rgb_to_array(iterated_albedo(p, image_from_arrays(image, alpha), iterations));
          },
          py::arg("image"), py::arg("alpha"), py::arg("iterations") = 3);
}
