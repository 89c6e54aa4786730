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
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace lightdiff::nn {

/// Channel-major (C, H, W) shape; vectors are (C, 1, 1).
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

template <class T>
struct Param {
  std::string name;
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;
  std::size_t size() const { return value.size(); }
};

/// Named parameter tensors in insertion order. References stay valid across add().
template <class T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, std::vector<int> dims, std::vector<T> value);
  Param<T>& get(const std::string& name);
  const Param<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  bool has_prefix(const std::string& prefix) const;
  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::deque<Param<T>>& params() { return params_; }
  const std::deque<Param<T>>& params() const { return params_; }

  void zero_grad();
  /// Copies every tensor whose name starts with `from` under the name with `to` substituted.
  void copy_prefix(const std::string& from, const std::string& to);
  void erase_prefix(const std::string& prefix);

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.dims, std::vector<U>(p.value.begin(), p.value.end()));
    return out;
  }

  bool operator==(const ParamStore& o) const;

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Reverse-mode tape. Nodes are appended by the ops below and differentiated
/// in reverse creation order by backward().
template <class T>
class Graph {
 public:
  using Var = std::size_t;
  // Fixed alignment keeps vectorized summation order independent of heap addresses.
  using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

  Var input(Shape shape, std::vector<T> value, bool needs_grad = false);
  /// Parameter view. Gradients are accumulated into p.grad when trainable.
  Var param(Param<T>& p, Shape shape, bool trainable = true);

  const Shape& shape(Var v) const { return nodes_[v].shape; }
  const Buffer& value(Var v) const { return nodes_[v].value; }
  /// Gradient of the last backward() target; empty if not reached.
  const Buffer& grad(Var v) const { return nodes_[v].grad; }
  bool needs_grad(Var v) const { return nodes_[v].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a scalar node and runs the tape.
  void backward(Var out);

  /// When enabled, piecewise ops (leaky_relu, clamps, floors, |.|) fold the
  /// branch taken by every element into branch_signature().
  void track_branches(bool on) { track_ = on; }
  std::uint64_t branch_signature() const { return branches_; }

  // Layers. Spatial ops require matching channel counts where noted.
  Var conv3x3(Var x, Var weight, Var bias);  // weight (Cout, Cin*9), zero padding
  Var leaky_relu(Var x, T slope = T(0.2));
  Var blur_pool(Var x);     // [1,2,1]^2 / 16, stride 2, circular padding; H and W even
  Var upsample2x(Var x);    // bilinear, half-pixel centers
  Var concat(Var a, Var b);  // along channels
  Var slice_channels(Var x, int begin, int end);
  Var add(Var a, Var b);
  Var scale(Var x, T s);
  Var mask(Var x, const std::vector<T>& alpha);  // x * alpha per pixel
  Var mask_mix(Var a, Var b, const std::vector<T>& alpha);  // alpha * a + (1 - alpha) * b per pixel
  Var global_average(Var x);           // (C, H, W) -> (C, 1, 1)
  Var linear(Var x, Var weight, Var bias);  // weight (Cout, Cin)
  Var exp(Var x);
  Var sigmoid_clamp(Var x, T gain = T(1.1), T offset = T(-0.05));  // clamp(gain*sigmoid(x)+offset, 0, 1)
  /// softplus(z + softplus^-1(max(base, floor))): the identity on `base` when z = 0.
  Var softplus_residual(Var z, Var base, T floor = T(1e-3));
  /// sum_c sum_p alpha |pred - target| / (C * sum_p alpha). Throws kEmptyRegion if sum alpha = 0.
  Var masked_l1(Var pred, const std::vector<T>& target, const std::vector<T>& alpha);

  // Buffers of another precision are converted element-wise.
  template <class U>
    requires(!std::is_same_v<U, T>)
  Var input(Shape shape, const std::vector<U>& value, bool needs_grad = false) {
    return input(shape, convert(value), needs_grad);
  }
  template <class U>
    requires(!std::is_same_v<U, T>)
  Var mask(Var x, const std::vector<U>& alpha) {
    return mask(x, convert(alpha));
  }
  template <class U>
    requires(!std::is_same_v<U, T>)
  Var mask_mix(Var a, Var b, const std::vector<U>& alpha) {
    return mask_mix(a, b, convert(alpha));
  }
  template <class U>
    requires(!std::is_same_v<U, T>)
  Var masked_l1(Var pred, const std::vector<U>& target, const std::vector<U>& alpha) {
    return masked_l1(pred, convert(target), convert(alpha));
  }

 private:
  struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  template <class U>
  static std::vector<T> convert(const std::vector<U>& v) {
    return std::vector<T>(v.begin(), v.end());
  }
  Var push(Shape shape, Buffer value, bool needs_grad);
  Buffer& acc(Var v);
  void branch(int b) {
    if (track_) branches_ = branches_ * 0x100000001b3ULL + static_cast<std::uint64_t>(b + 1);
  }

  std::vector<Node> nodes_;
  bool track_ = false;
  std::uint64_t branches_ = 0xcbf29ce484222325ULL;
};

/// Adam with bias correction.
template <class T>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit Adam(Options options) : options_(options) {}
  /// Updates every parameter whose name starts with `prefix` and clears its gradient.
  void step(ParamStore<T>& store, const std::string& prefix, double learning_rate);
  long long steps() const { return t_; }

 private:
  Options options_;
  long long t_ = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments_;
};

/// Uniform(-b, b) with b = sqrt(6 / ((1 + slope^2) * fan_in)).
template <class T>
std::vector<T> kaiming_uniform(std::size_t count, int fan_in, std::mt19937_64& rng, double slope = 0.2);

struct GradCheckStats {
  int checked = 0;
  int refined = 0;  // step shrunk to stay on one side of every kink
  int skipped = 0;  // still straddling a kink at the smallest step
};

template <class T>
using LossBuilder = std::function<typename Graph<T>::Var(Graph<T>&, ParamStore<T>&)>;

/// Central-difference check of d(loss)/d(params) on `samples` randomly drawn
/// scalars. Gradients come from the double tape; the finite differences are
/// taken on the long double evaluation of the same loss so that their
/// rounding error stays far below the smallest gradients compared. Returns
/// max |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). A probe whose branch
/// signature differs from the unperturbed one is retried with step / 10 down
/// to min_step, then skipped. Throws kDivergence on non-finite gradients.
double grad_check(const LossBuilder<double>& build_loss, const LossBuilder<long double>& reference,
                  ParamStore<double>& params, int samples = 100, std::uint64_t seed = 0, double step = 1e-4,
                  GradCheckStats* stats = nullptr, double min_step = 1e-7);

/// `build_loss` is called with both Graph<double> and Graph<long double>.
template <class Build>
  requires std::is_invocable_v<const Build&, Graph<long double>&, ParamStore<long double>&>
double grad_check(const Build& build_loss, ParamStore<double>& params, int samples = 100, std::uint64_t seed = 0,
                  double step = 1e-4, GradCheckStats* stats = nullptr, double min_step = 1e-7) {
  return grad_check(LossBuilder<double>(build_loss), LossBuilder<long double>(build_loss), params, samples, seed, step,
                    stats, min_step);
}

}  // namespace lightdiff::nn
