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

// Brute-force reference implementations used only by tests. They follow the
// defining formulas directly and share no code with the library routines
// they check.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

// Pairwise Gini: sum_i sum_j |x_i - x_j| / (2 k sum_i x_i).
inline double gini_pairwise(const std::vector<double>& x) {
  long double num = 0.0L;
  long double sum = 0.0L;
  for (double xi : x) {
    sum += xi;
    for (double xj : x) num += std::fabs(static_cast<long double>(xi) - xj);
  }
  return static_cast<double>(num / (2.0L * static_cast<long double>(x.size()) * sum));
}

inline double rec709(double r, double g, double b) { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }

inline double texel_theta(int row, int height) { return std::numbers::pi * (row + 0.5) / height; }
inline double texel_phi(int col, int width) { return 2.0 * std::numbers::pi * (col + 0.5) / width; }

struct Dir {
  double x, y, z;
};

inline Dir texel_dir(int row, int col, int width, int height) {
  const double t = texel_theta(row, height);
  const double p = texel_phi(col, width);
  return {std::sin(t) * std::cos(p), std::cos(t), std::sin(t) * std::sin(p)};
}

// Gini samples x_i = lum(E_i) sin(theta_i) for a row-major luminance grid.
inline std::vector<double> weighted_samples(const std::vector<double>& lum, int width, int height) {
  std::vector<double> x(lum.size());
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) x[r * width + c] = lum[r * width + c] * std::sin(texel_theta(r, height));
  return x;
}

}  // namespace oracle
