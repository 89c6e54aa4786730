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

#include <cstddef>
#include <span>
#include <vector>

#include "lightdiff/types.hpp"

namespace lightdiff {

/// Single-channel float image, row-major, row 0 at the top.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y) { return data_[index(x, y)]; }
  float at(int x, int y) const { return data_[index(x, y)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool same_size(const GrayImage& o) const { return width_ == o.width_ && height_ == o.height_; }
  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Linear-RGB image with an alpha channel. RGB is not premultiplied.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return alpha_.size(); }

  Rgb rgb(int x, int y) const;
  void set_rgb(int x, int y, const Rgb& c);
  float channel(int x, int y, int c) const { return rgb_[3 * index(x, y) + c]; }
  float& channel(int x, int y, int c) { return rgb_[3 * index(x, y) + c]; }
  float alpha(int x, int y) const { return alpha_[index(x, y)]; }
  float& alpha(int x, int y) { return alpha_[index(x, y)]; }

  // Interleaved RGB (3 floats per pixel) and the alpha plane.
  std::span<float> rgb_data() { return rgb_; }
  std::span<const float> rgb_data() const { return rgb_; }
  std::span<float> alpha_data() { return alpha_; }
  std::span<const float> alpha_data() const { return alpha_; }

  GrayImage alpha_image() const;
  void set_alpha(const GrayImage& a);
  GrayImage luminance() const;

  bool same_size(const ImageBuffer& o) const { return width_ == o.width_ && height_ == o.height_; }
  bool same_size(const GrayImage& o) const { return width_ == o.width() && height_ == o.height(); }
  bool operator==(const ImageBuffer&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> rgb_;
  std::vector<float> alpha_;
};

// Separable Gaussian blur with clamp-to-edge borders. sigma <= 0 returns a copy.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

// Bilinear resample of RGB+alpha to a new size (pixel-center aligned).
ImageBuffer resize_bilinear(const ImageBuffer& img, int width, int height);

}  // namespace lightdiff
