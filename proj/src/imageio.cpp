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

#include "lightdiff/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "lightdiff/error.hpp"

namespace lightdiff::io {

namespace {

static_assert(std::endian::native == std::endian::little, "PFM I/O assumes a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open for reading: " + path.string());
  return in;
}

std::string read_token(std::istream& in) {
  std::string tok;
  in >> tok;
  if (!in) fail(ErrorCode::kFormat, "truncated header");
  return tok;
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const FloatRaster& raster) {
  require(raster.channels == 1 || raster.channels == 3, ErrorCode::kFormat, "PFM supports 1 or 3 channels");
  auto out = open_out(path);
  out << (raster.channels == 3 ? "PF" : "Pf") << "\n" << raster.width << " " << raster.height << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = raster.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(raster.data.data() + y * row), static_cast<std::streamsize>(row * sizeof(float)));
  }
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

FloatRaster read_pfm(const std::filesystem::path& path) {
  auto in = open_in(path);
  FloatRaster r;
  const std::string magic = read_token(in);
  if (magic == "PF") {
    r.channels = 3;
  } else if (magic == "Pf") {
    r.channels = 1;
  } else {
    fail(ErrorCode::kFormat, "not a PFM file: " + path.string());
  }
  r.width = std::stoi(read_token(in));
  r.height = std::stoi(read_token(in));
  const double scale = std::stod(read_token(in));
  in.get();  // single whitespace before the raster
  if (r.width <= 0 || r.height <= 0) fail(ErrorCode::kFormat, "bad PFM dimensions");
  if (scale >= 0.0) fail(ErrorCode::kFormat, "big-endian PFM is not supported");
  const std::size_t row = static_cast<std::size_t>(r.width) * r.channels;
  r.data.resize(row * r.height);
  for (int y = r.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(r.data.data() + y * row), static_cast<std::streamsize>(row * sizeof(float)));
  }
  if (!in) fail(ErrorCode::kFormat, "truncated PFM raster: " + path.string());
  const float s = static_cast<float>(std::abs(scale));
  if (s != 1.0f) {
    for (auto& v : r.data) v *= s;
  }
  return r;
}

void write_pfm(const std::filesystem::path& path, const ImageBuffer& img) {
  FloatRaster r{img.width(), img.height(), 3, {}};
  r.data.assign(img.rgb_data().begin(), img.rgb_data().end());
  write_pfm(path, r);
}

void write_pfm(const std::filesystem::path& path, const GrayImage& img) {
  FloatRaster r{img.width(), img.height(), 1, {}};
  r.data.assign(img.data().begin(), img.data().end());
  write_pfm(path, r);
}

void write_pfm(const std::filesystem::path& path, const EnvironmentMap& env) {
  FloatRaster r{env.width(), env.height(), 3, {}};
  r.data.reserve(env.texel_count() * 3);
  for (const Rgb& e : env.texels()) {
    r.data.push_back(static_cast<float>(e.r));
    r.data.push_back(static_cast<float>(e.g));
    r.data.push_back(static_cast<float>(e.b));
  }
  write_pfm(path, r);
}

ImageBuffer read_image_pfm(const std::filesystem::path& path) {
  const FloatRaster r = read_pfm(path);
  ImageBuffer img(r.width, r.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) img.rgb_data()[3 * i + c] = r.channels == 3 ? r.data[3 * i + c] : r.data[i];
    img.alpha_data()[i] = 1.0f;
  }
  return img;
}

GrayImage read_gray_pfm(const std::filesystem::path& path) {
  const FloatRaster r = read_pfm(path);
  require(r.channels == 1, ErrorCode::kFormat, "expected a single-channel PFM");
  GrayImage img(r.width, r.height);
  std::copy(r.data.begin(), r.data.end(), img.data().begin());
  return img;
}

namespace {

void float_to_rgbe(const Rgb& c, unsigned char* rgbe) {
  const double v = std::max({c.r, c.g, c.b});
  if (v < 1e-32) {
    rgbe[0] = rgbe[1] = rgbe[2] = rgbe[3] = 0;
    return;
  }
  int e = 0;
  const double m = std::frexp(v, &e) * 256.0 / v;
  rgbe[0] = static_cast<unsigned char>(c.r * m);
  rgbe[1] = static_cast<unsigned char>(c.g * m);
  rgbe[2] = static_cast<unsigned char>(c.b * m);
  rgbe[3] = static_cast<unsigned char>(e + 128);
}

Rgb rgbe_to_float(const unsigned char* rgbe) {
  if (rgbe[3] == 0) return {};
  const double f = std::ldexp(1.0, rgbe[3] - (128 + 8));
  return {(rgbe[0] + 0.5) * f, (rgbe[1] + 0.5) * f, (rgbe[2] + 0.5) * f};
}

bool read_rle_scanline(std::istream& in, int width, std::vector<unsigned char>& line) {
  unsigned char head[4];
  in.read(reinterpret_cast<char*>(head), 4);
  if (!in) return false;
  if (width < 8 || width > 0x7fff || head[0] != 2 || head[1] != 2 || (head[2] & 0x80)) {
    // Flat scanline: the four bytes already read are the first pixel.
    std::copy(head, head + 4, line.begin());
    in.read(reinterpret_cast<char*>(line.data() + 4), static_cast<std::streamsize>(4 * (width - 1)));
    return static_cast<bool>(in);
  }
  if (((head[2] << 8) | head[3]) != width) return false;
  std::vector<unsigned char> planes(4 * static_cast<std::size_t>(width));
  for (int ch = 0; ch < 4; ++ch) {
    int x = 0;
    while (x < width) {
      int count = in.get();
      if (count == EOF) return false;
      if (count > 128) {
        count -= 128;
        const int value = in.get();
        if (value == EOF || x + count > width) return false;
        std::fill_n(planes.begin() + ch * width + x, count, static_cast<unsigned char>(value));
      } else {
        if (count == 0 || x + count > width) return false;
        in.read(reinterpret_cast<char*>(planes.data() + ch * width + x), count);
      }
      x += count;
    }
  }
  for (int x = 0; x < width; ++x) {
    for (int ch = 0; ch < 4; ++ch) line[4 * x + ch] = planes[ch * width + x];
  }
  return static_cast<bool>(in);
}

}  // namespace

void write_hdr(const std::filesystem::path& path, const EnvironmentMap& env) {
  env.validate();
  auto out = open_out(path);
  out << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " << env.height() << " +X " << env.width() << "\n";
  std::vector<unsigned char> line(4 * static_cast<std::size_t>(env.width()));
  for (int r = 0; r < env.height(); ++r) {
    for (int c = 0; c < env.width(); ++c) float_to_rgbe(env.at(r, c), &line[4 * c]);
    out.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(line.size()));
  }
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

EnvironmentMap read_hdr(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("#?", 0) != 0) fail(ErrorCode::kFormat, "not a Radiance HDR file: " + path.string());
  bool rgbe = false;
  while (std::getline(in, line) && !line.empty()) {
    if (line == "FORMAT=32-bit_rle_rgbe") rgbe = true;
  }
  if (!rgbe) fail(ErrorCode::kFormat, "unsupported HDR pixel format");
  std::getline(in, line);
  std::istringstream res(line);
  std::string ya, xa;
  int h = 0, w = 0;
  res >> ya >> h >> xa >> w;
  if (ya != "-Y" || xa != "+X" || w <= 0 || h <= 0) fail(ErrorCode::kFormat, "unsupported HDR orientation: " + line);
  EnvironmentMap env(w, h);
  std::vector<unsigned char> scan(4 * static_cast<std::size_t>(w));
  for (int r = 0; r < h; ++r) {
    if (!read_rle_scanline(in, w, scan)) fail(ErrorCode::kFormat, "truncated HDR scanline");
    for (int c = 0; c < w; ++c) env.at(r, c) = rgbe_to_float(&scan[4 * c]);
  }
  return env;
}

EnvironmentMap read_env(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".hdr") return read_hdr(path);
  if (ext == ".pfm") {
    const FloatRaster r = read_pfm(path);
    require(r.channels == 3, ErrorCode::kFormat, "environment PFM must be RGB");
    EnvironmentMap env(r.width, r.height);
    for (std::size_t i = 0; i < env.texel_count(); ++i) env[i] = {r.data[3 * i], r.data[3 * i + 1], r.data[3 * i + 2]};
    env.validate();
    return env;
  }
  fail(ErrorCode::kFormat, "unknown environment map extension: " + ext);
}

void write_env(const std::filesystem::path& path, const EnvironmentMap& env) {
  const auto ext = path.extension().string();
  if (ext == ".hdr") return write_hdr(path, env);
  if (ext == ".pfm") return write_pfm(path, env);
  fail(ErrorCode::kFormat, "unknown environment map extension: " + ext);
}

namespace {

unsigned char to_srgb8(float v) {
  const double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
  const double s = x <= 0.0031308 ? 12.92 * x : 1.055 * std::pow(x, 1.0 / 2.4) - 0.055;
  return static_cast<unsigned char>(std::lround(s * 255.0));
}

unsigned char to_linear8(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type,
                    const std::vector<unsigned char>& pixels, int channels) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kInternal, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  std::vector<unsigned char> px(img.pixel_count() * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_srgb8(img.rgb_data()[i]);
  write_png_rows(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, px, 3);
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  std::vector<unsigned char> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_linear8(img[i]);
  write_png_rows(path, img.width(), img.height(), PNG_COLOR_TYPE_GRAY, px, 1);
}

}  // namespace lightdiff::io
