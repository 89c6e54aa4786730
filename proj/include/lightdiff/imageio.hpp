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

#include <filesystem>
#include <vector>

#include "lightdiff/envmap.hpp"
#include "lightdiff/image.hpp"

namespace lightdiff::io {

/// Raw float raster as stored in a PFM file, rows ordered top to bottom.
struct FloatRaster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<float> data;
};

// PFM files are written little-endian with scale -1.0 and bottom-to-top
// scanlines as the format prescribes; in memory row 0 is always the top
// (the north pole for environment maps).
void write_pfm(const std::filesystem::path& path, const FloatRaster& raster);
FloatRaster read_pfm(const std::filesystem::path& path);

void write_pfm(const std::filesystem::path& path, const ImageBuffer& img);  // RGB only
void write_pfm(const std::filesystem::path& path, const GrayImage& img);
void write_pfm(const std::filesystem::path& path, const EnvironmentMap& env);

ImageBuffer read_image_pfm(const std::filesystem::path& path);  // alpha set to 1
GrayImage read_gray_pfm(const std::filesystem::path& path);

/// Radiance RGBE. Writing uses flat scanlines; reading accepts flat and RLE.
void write_hdr(const std::filesystem::path& path, const EnvironmentMap& env);
EnvironmentMap read_hdr(const std::filesystem::path& path);

/// Dispatches on extension (.pfm or .hdr).
EnvironmentMap read_env(const std::filesystem::path& path);
void write_env(const std::filesystem::path& path, const EnvironmentMap& env);

/// 8-bit PNG. RGB previews use the sRGB transfer curve on clamped linear
/// values; gray images (masks, S/D maps) are written linearly.
void write_png(const std::filesystem::path& path, const ImageBuffer& img);
void write_png(const std::filesystem::path& path, const GrayImage& img);

}  // namespace lightdiff::io
