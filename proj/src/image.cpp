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

#include "lightdiff/image.hpp"

#include <algorithm>
#include <cmath>

#include "lightdiff/error.hpp"

namespace lightdiff {

GrayImage::GrayImage(int width, int height, float fill) : width_(width), height_(height) {
  require(width > 0 && height > 0, ErrorCode::kPrecondition, "image dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

ImageBuffer::ImageBuffer(int width, int height) : width_(width), height_(height) {
  require(width > 0 && height > 0, ErrorCode::kPrecondition, "image dimensions must be positive");
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  rgb_.assign(3 * n, 0.0f);
  alpha_.assign(n, 0.0f);
}

Rgb ImageBuffer::rgb(int x, int y) const {
  const std::size_t i = 3 * index(x, y);
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void ImageBuffer::set_rgb(int x, int y, const Rgb& c) {
  const std::size_t i = 3 * index(x, y);
  rgb_[i] = static_cast<float>(c.r);
  rgb_[i + 1] = static_cast<float>(c.g);
  rgb_[i + 2] = static_cast<float>(c.b);
}

GrayImage ImageBuffer::alpha_image() const {
  GrayImage a(width_, height_);
  std::copy(alpha_.begin(), alpha_.end(), a.data().begin());
  return a;
}

void ImageBuffer::set_alpha(const GrayImage& a) {
  require(same_size(a), ErrorCode::kDimensionMismatch, "alpha size differs from image");
  std::copy(a.data().begin(), a.data().end(), alpha_.begin());
}

GrayImage ImageBuffer::luminance() const {
  GrayImage out(width_, height_);
  for (std::size_t i = 0; i < alpha_.size(); ++i) {
    out[i] = static_cast<float>(luminance_unchecked(rgb_[3 * i], rgb_[3 * i + 1], rgb_[3 * i + 2]));
  }
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int w = img.width();
  const int h = img.height();
  GrayImage tmp(w, h);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int width, int height) {
  ImageBuffer out(width, height);
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double tx = fx - x0;
      auto lerp2 = [&](auto get) {
        return (1 - ty) * ((1 - tx) * get(x0, y0) + tx * get(x1, y0)) + ty * ((1 - tx) * get(x0, y1) + tx * get(x1, y1));
      };
      for (int c = 0; c < 3; ++c) {
        out.channel(x, y, c) = static_cast<float>(lerp2([&](int px, int py) { return double(img.channel(px, py, c)); }));
      }
      out.alpha(x, y) = static_cast<float>(lerp2([&](int px, int py) { return double(img.alpha(px, py)); }));
    }
  }
  return out;
}

}  // namespace lightdiff
