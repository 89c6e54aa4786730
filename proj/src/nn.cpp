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

#include "lightdiff/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include <Eigen/Core>

#include "lightdiff/error.hpp"

namespace lightdiff::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// log(exp(y) - 1) for y > 0.
template <class T>
T softplus_inverse(T y) {
  return y > T(20) ? y : std::log(std::expm1(y));
}

int wrap(int i, int n) { return (i % n + n) % n; }

// Source index and weights for 2x bilinear upsampling with half-pixel centers.
struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> upsample_taps(int n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    const int i0 = std::min(static_cast<int>(src), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

// ---------------------------------------------------------------- ParamStore

template <class T>
Param<T>& ParamStore<T>::add(const std::string& name, std::vector<int> dims, std::vector<T> value) {
  if (contains(name)) fail(ErrorCode::kParameter, "duplicate parameter '" + name + "'");
  std::size_t n = 1;
  for (int d : dims) {
    if (!(d >= 1)) fail(ErrorCode::kShape, "parameter '" + name + "' has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  if (!(n == value.size())) fail(ErrorCode::kShape, "parameter '" + name + "' size does not match its dimensions");
  index_[name] = params_.size();
  Param<T>& p = params_.emplace_back();
  p.name = name;
  p.dims = std::move(dims);
  p.value = std::move(value);
  p.grad.assign(p.value.size(), T(0));
  return p;
}

template <class T>
Param<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (!(it != index_.end())) fail(ErrorCode::kFormat, "missing parameter '" + name + "'");
  return params_[it->second];
}

template <class T>
const Param<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (!(it != index_.end())) fail(ErrorCode::kFormat, "missing parameter '" + name + "'");
  return params_[it->second];
}

template <class T>
bool ParamStore<T>::has_prefix(const std::string& prefix) const {
  auto it = index_.lower_bound(prefix);
  return it != index_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <class T>
void ParamStore<T>::copy_prefix(const std::string& from, const std::string& to) {
  std::vector<std::pair<std::string, std::size_t>> hits;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name.compare(0, from.size(), from) == 0) hits.emplace_back(to + params_[i].name.substr(from.size()), i);
  for (const auto& [name, i] : hits) {
    const Param<T> src = params_[i];
    if (contains(name)) {
      Param<T>& dst = get(name);
      if (!(dst.dims == src.dims)) fail(ErrorCode::kShape, "shape mismatch copying into '" + name + "'");
      dst.value = src.value;
    } else {
      add(name, src.dims, src.value);
    }
  }
}

template <class T>
void ParamStore<T>::erase_prefix(const std::string& prefix) {
  ParamStore<T> kept;
  for (const auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) != 0) kept.add(p.name, p.dims, p.value);
  *this = std::move(kept);
}

template <class T>
bool ParamStore<T>::operator==(const ParamStore& o) const {
  if (params_.size() != o.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = o.params_[i];
    if (a.name != b.name || a.dims != b.dims || a.value != b.value) return false;
  }
  return true;
}

// --------------------------------------------------------------------- Graph

template <class T>
typename Graph<T>::Var Graph<T>::push(Shape shape, Buffer value, bool needs_grad) {
  if (!(value.size() == shape.size())) fail(ErrorCode::kShape, "tensor value does not match shape " + to_string(shape));
  Node& n = nodes_.emplace_back();
  n.shape = shape;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  return nodes_.size() - 1;
}

template <class T>
typename Graph<T>::Buffer& Graph<T>::acc(Var v) {
  Node& n = nodes_[v];
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <class T>
typename Graph<T>::Var Graph<T>::input(Shape shape, std::vector<T> value, bool needs_grad) {
  return push(shape, Buffer(value.begin(), value.end()), needs_grad);
}

template <class T>
typename Graph<T>::Var Graph<T>::param(Param<T>& p, Shape shape, bool trainable) {
  if (!(shape.size() == p.size())) fail(ErrorCode::kShape, "parameter '" + p.name + "' viewed with a mismatched shape");
  const Var v = push(shape, Buffer(p.value.begin(), p.value.end()), trainable);
  if (trainable) {
    Param<T>* target = &p;
    nodes_[v].back = [this, v, target] {
      const auto& g = nodes_[v].grad;
      for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += g[i];
    };
  }
  return v;
}

template <class T>
void Graph<T>::backward(Var out) {
  require(nodes_[out].value.size() == 1, ErrorCode::kShape, "backward() needs a scalar output");
  for (auto& n : nodes_) n.grad.clear();
  acc(out)[0] = T(1);
  for (std::size_t i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back();
  }
}

template <class T>
typename Graph<T>::Var Graph<T>::conv3x3(Var x, Var weight, Var bias) {
  const Shape xs = shape(x);
  const Shape ws = shape(weight);
  const int cin = xs.c, h = xs.h, w = xs.w, cout = ws.c;
  if (!(static_cast<std::size_t>(ws.h) * ws.w == static_cast<std::size_t>(cin) * 9)) fail(ErrorCode::kShape,
          "conv weight " + to_string(ws) + " does not fit input " + to_string(xs));
  require(shape(bias).size() == static_cast<std::size_t>(cout), ErrorCode::kShape, "conv bias size mismatch");
  const int k = cin * 9;
  const std::size_t hw = xs.plane();
  auto col = std::make_shared<Buffer>(static_cast<std::size_t>(k) * hw, T(0));
  const T* xv = value(x).data();
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col->data() + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* src = xv + (static_cast<std::size_t>(c) * h + sy) * w;
          T* dst = row + static_cast<std::size_t>(y) * w;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx + dx];
        }
      }
    }
  }
  Buffer out(static_cast<std::size_t>(cout) * hw);
  {
    MapMat<T> o(out.data(), cout, static_cast<Eigen::Index>(hw));
    CMapMat<T> wm(value(weight).data(), cout, k);
    CMapMat<T> cm(col->data(), k, static_cast<Eigen::Index>(hw));
    o.noalias() = wm * cm;
    const auto& b = value(bias);
    for (int c = 0; c < cout; ++c) o.row(c).array() += b[static_cast<std::size_t>(c)];
  }
  const bool ng = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
  const Var v = push({cout, h, w}, std::move(out), ng);
  if (ng) {
    nodes_[v].back = [this, v, x, weight, bias, col, cin, h, w, cout, k, hw] {
      CMapMat<T> go(nodes_[v].grad.data(), cout, static_cast<Eigen::Index>(hw));
      if (needs_grad(weight)) {
        MapMat<T> gw(acc(weight).data(), cout, k);
        CMapMat<T> cm(col->data(), k, static_cast<Eigen::Index>(hw));
        gw.noalias() += go * cm.transpose();
      }
      if (needs_grad(bias)) {
        auto& gb = acc(bias);
        for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += go.row(c).sum();
      }
      if (needs_grad(x)) {
        RowMat<T> gcol(k, static_cast<Eigen::Index>(hw));
        CMapMat<T> wm(value(weight).data(), cout, k);
        gcol.noalias() = wm.transpose() * go;
        auto& gx = acc(x);
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const T* row = gcol.data() + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * hw;
              const int dy = ky - 1, dx = kx - 1;
              for (int y = 0; y < h; ++y) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h) continue;
                T* dst = gx.data() + (static_cast<std::size_t>(c) * h + sy) * w;
                const T* src = row + static_cast<std::size_t>(y) * w;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int xx = x0; xx < x1; ++xx) dst[xx + dx] += src[xx];
              }
            }
          }
        }
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::leaky_relu(Var x, T slope) {
  Buffer out = value(x);
  for (auto& e : out) {
    branch(e > T(0));
    e = e > T(0) ? e : e * slope;
  }
  const Var v = push(shape(x), std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, slope] {
      const auto& go = nodes_[v].grad;
      const auto& xv = value(x);
      auto& gx = acc(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += xv[i] > T(0) ? go[i] : go[i] * slope;
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::blur_pool(Var x) {
  const Shape s = shape(x);
  if (!(s.h % 2 == 0 && s.w % 2 == 0)) fail(ErrorCode::kShape, "blur_pool needs even spatial size, got " + to_string(s));
  const Shape os{s.c, s.h / 2, s.w / 2};
  static constexpr T kTap[3] = {T(0.25), T(0.5), T(0.25)};
  Buffer out(os.size(), T(0));
  const auto& xv = value(x);
  for (int c = 0; c < s.c; ++c) {
    const T* src = xv.data() + static_cast<std::size_t>(c) * s.plane();
    T* dst = out.data() + static_cast<std::size_t>(c) * os.plane();
    for (int y = 0; y < os.h; ++y) {
      for (int xx = 0; xx < os.w; ++xx) {
        T acc_v = T(0);
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = wrap(2 * y + ky - 1, s.h);
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = wrap(2 * xx + kx - 1, s.w);
            acc_v += kTap[ky] * kTap[kx] * src[static_cast<std::size_t>(sy) * s.w + sx];
          }
        }
        dst[static_cast<std::size_t>(y) * os.w + xx] = acc_v;
      }
    }
  }
  const Var v = push(os, std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, s, os] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (int c = 0; c < s.c; ++c) {
        T* dst = gx.data() + static_cast<std::size_t>(c) * s.plane();
        const T* src = go.data() + static_cast<std::size_t>(c) * os.plane();
        for (int y = 0; y < os.h; ++y) {
          for (int xx = 0; xx < os.w; ++xx) {
            const T g = src[static_cast<std::size_t>(y) * os.w + xx];
            for (int ky = 0; ky < 3; ++ky) {
              const int sy = wrap(2 * y + ky - 1, s.h);
              for (int kx = 0; kx < 3; ++kx) {
                const int sx = wrap(2 * xx + kx - 1, s.w);
                dst[static_cast<std::size_t>(sy) * s.w + sx] += kTap[ky] * kTap[kx] * g;
              }
            }
          }
        }
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::upsample2x(Var x) {
  const Shape s = shape(x);
  const Shape os{s.c, 2 * s.h, 2 * s.w};
  auto ty = std::make_shared<std::vector<Tap>>(upsample_taps(s.h));
  auto tx = std::make_shared<std::vector<Tap>>(upsample_taps(s.w));
  Buffer out(os.size());
  const auto& xv = value(x);
  for (int c = 0; c < s.c; ++c) {
    const T* src = xv.data() + static_cast<std::size_t>(c) * s.plane();
    T* dst = out.data() + static_cast<std::size_t>(c) * os.plane();
    for (int y = 0; y < os.h; ++y) {
      const Tap& a = (*ty)[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < os.w; ++xx) {
        const Tap& b = (*tx)[static_cast<std::size_t>(xx)];
        dst[static_cast<std::size_t>(y) * os.w + xx] = static_cast<T>(
            a.w0 * (b.w0 * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1]) +
            a.w1 * (b.w0 * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1]));
      }
    }
  }
  const Var v = push(os, std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, s, os, ty, tx] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (int c = 0; c < s.c; ++c) {
        T* dst = gx.data() + static_cast<std::size_t>(c) * s.plane();
        const T* src = go.data() + static_cast<std::size_t>(c) * os.plane();
        for (int y = 0; y < os.h; ++y) {
          const Tap& a = (*ty)[static_cast<std::size_t>(y)];
          for (int xx = 0; xx < os.w; ++xx) {
            const Tap& b = (*tx)[static_cast<std::size_t>(xx)];
            const T g = src[static_cast<std::size_t>(y) * os.w + xx];
            dst[a.i0 * s.w + b.i0] += static_cast<T>(a.w0 * b.w0) * g;
            dst[a.i0 * s.w + b.i1] += static_cast<T>(a.w0 * b.w1) * g;
            dst[a.i1 * s.w + b.i0] += static_cast<T>(a.w1 * b.w0) * g;
            dst[a.i1 * s.w + b.i1] += static_cast<T>(a.w1 * b.w1) * g;
          }
        }
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::concat(Var a, Var b) {
  const Shape sa = shape(a), sb = shape(b);
  if (!(sa.h == sb.h && sa.w == sb.w)) fail(ErrorCode::kShape, "concat of " + to_string(sa) + " and " + to_string(sb));
  Buffer out;
  out.reserve(sa.size() + sb.size());
  out.insert(out.end(), value(a).begin(), value(a).end());
  out.insert(out.end(), value(b).begin(), value(b).end());
  const bool ng = needs_grad(a) || needs_grad(b);
  const Var v = push({sa.c + sb.c, sa.h, sa.w}, std::move(out), ng);
  if (ng) {
    const std::size_t na = sa.size();
    nodes_[v].back = [this, v, a, b, na] {
      const auto& go = nodes_[v].grad;
      if (needs_grad(a)) {
        auto& ga = acc(a);
        for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
      }
      if (needs_grad(b)) {
        auto& gb = acc(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::slice_channels(Var x, int begin, int end) {
  const Shape s = shape(x);
  require(0 <= begin && begin < end && end <= s.c, ErrorCode::kShape, "channel slice out of range");
  const std::size_t off = static_cast<std::size_t>(begin) * s.plane();
  const std::size_t n = static_cast<std::size_t>(end - begin) * s.plane();
  Buffer out(value(x).begin() + static_cast<std::ptrdiff_t>(off),
                     value(x).begin() + static_cast<std::ptrdiff_t>(off + n));
  const Var v = push({end - begin, s.h, s.w}, std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, off] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[off + i] += go[i];
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::add(Var a, Var b) {
  require(shape(a) == shape(b), ErrorCode::kShape, "add of mismatched shapes");
  Buffer out = value(a);
  const auto& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  const Var v = push(shape(a), std::move(out), ng);
  if (ng) {
    nodes_[v].back = [this, v, a, b] {
      const auto& go = nodes_[v].grad;
      for (Var t : {a, b}) {
        if (!needs_grad(t)) continue;
        auto& g = acc(t);
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::scale(Var x, T s) {
  Buffer out = value(x);
  for (auto& e : out) e *= s;
  const Var v = push(shape(x), std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, s] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += s * go[i];
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::mask(Var x, const std::vector<T>& alpha) {
  const Shape s = shape(x);
  if (alpha.size() != s.plane()) fail(ErrorCode::kDimensionMismatch, "mask does not match " + to_string(s));
  Buffer out = value(x);
  for (int c = 0; c < s.c; ++c)
    for (std::size_t p = 0; p < s.plane(); ++p) out[static_cast<std::size_t>(c) * s.plane() + p] *= alpha[p];
  const Var v = push(s, std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    auto al = std::make_shared<std::vector<T>>(alpha);
    nodes_[v].back = [this, v, x, al, s] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (int c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p) {
          const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
          gx[i] += go[i] * (*al)[p];
        }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::mask_mix(Var a, Var b, const std::vector<T>& alpha) {
  const Shape s = shape(a);
  require(s == shape(b), ErrorCode::kShape, "mask_mix of mismatched shapes");
  if (alpha.size() != s.plane()) fail(ErrorCode::kDimensionMismatch, "mask does not match " + to_string(s));
  Buffer out(s.size());
  const auto& av = value(a);
  const auto& bv = value(b);
  for (int c = 0; c < s.c; ++c)
    for (std::size_t p = 0; p < s.plane(); ++p) {
      const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
      out[i] = alpha[p] * av[i] + (T(1) - alpha[p]) * bv[i];
    }
  const bool ng = needs_grad(a) || needs_grad(b);
  const Var v = push(s, std::move(out), ng);
  if (ng) {
    auto al = std::make_shared<std::vector<T>>(alpha);
    nodes_[v].back = [this, v, a, b, al, s] {
      const auto& go = nodes_[v].grad;
      for (int c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p) {
          const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
          if (needs_grad(a)) acc(a)[i] += go[i] * (*al)[p];
          if (needs_grad(b)) acc(b)[i] += go[i] * (T(1) - (*al)[p]);
        }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::global_average(Var x) {
  const Shape s = shape(x);
  const std::size_t plane = s.plane();
  Buffer out(static_cast<std::size_t>(s.c));
  for (int c = 0; c < s.c; ++c) {
    T sum = T(0);
    for (std::size_t p = 0; p < plane; ++p) sum += value(x)[static_cast<std::size_t>(c) * plane + p];
    out[static_cast<std::size_t>(c)] = sum / static_cast<T>(plane);
  }
  const Var v = push({s.c, 1, 1}, std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, plane] {
      const auto& go = nodes_[v].grad;
      auto& gx = acc(x);
      for (std::size_t c = 0; c < go.size(); ++c)
        for (std::size_t p = 0; p < plane; ++p) gx[c * plane + p] += go[c] / static_cast<T>(plane);
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::linear(Var x, Var weight, Var bias) {
  const int cin = static_cast<int>(shape(x).size());
  const Shape ws = shape(weight);
  const int cout = ws.c;
  require(static_cast<int>(ws.h * ws.w) == cin, ErrorCode::kShape, "linear weight does not fit input");
  require(shape(bias).size() == static_cast<std::size_t>(cout), ErrorCode::kShape, "linear bias size mismatch");
  Buffer out(static_cast<std::size_t>(cout));
  for (int o = 0; o < cout; ++o) {
    T sum = value(bias)[static_cast<std::size_t>(o)];
    for (int i = 0; i < cin; ++i)
      sum += value(weight)[static_cast<std::size_t>(o) * cin + i] * value(x)[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = sum;
  }
  const bool ng = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
  const Var v = push({cout, 1, 1}, std::move(out), ng);
  if (ng) {
    nodes_[v].back = [this, v, x, weight, bias, cin, cout] {
      const auto& go = nodes_[v].grad;
      for (int o = 0; o < cout; ++o) {
        const T g = go[static_cast<std::size_t>(o)];
        if (needs_grad(bias)) acc(bias)[static_cast<std::size_t>(o)] += g;
        for (int i = 0; i < cin; ++i) {
          const std::size_t wi = static_cast<std::size_t>(o) * cin + i;
          if (needs_grad(weight)) acc(weight)[wi] += g * value(x)[static_cast<std::size_t>(i)];
          if (needs_grad(x)) acc(x)[static_cast<std::size_t>(i)] += g * value(weight)[wi];
        }
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::exp(Var x) {
  Buffer out = value(x);
  for (auto& e : out) e = std::exp(e);
  const Var v = push(shape(x), std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x] {
      const auto& go = nodes_[v].grad;
      const auto& y = value(v);
      auto& gx = acc(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i];
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::sigmoid_clamp(Var x, T gain, T offset) {
  Buffer out = value(x);
  for (auto& e : out) {
    const T pre = gain * sigmoid(e) + offset;
    branch(pre <= T(0) ? 0 : pre >= T(1) ? 2 : 1);
    e = std::clamp(pre, T(0), T(1));
  }
  const Var v = push(shape(x), std::move(out), needs_grad(x));
  if (needs_grad(x)) {
    nodes_[v].back = [this, v, x, gain, offset] {
      const auto& go = nodes_[v].grad;
      const auto& xv = value(x);
      auto& gx = acc(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T s = sigmoid(xv[i]);
        const T pre = gain * s + offset;
        if (pre > T(0) && pre < T(1)) gx[i] += go[i] * gain * s * (T(1) - s);
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::softplus_residual(Var z, Var base, T floor) {
  require(shape(z) == shape(base), ErrorCode::kShape, "softplus_residual of mismatched shapes");
  const auto& zv = value(z);
  const auto& bv = value(base);
  Buffer out(zv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    branch(bv[i] > floor);
    out[i] = softplus(zv[i] + softplus_inverse(std::max(bv[i], floor)));
  }
  const bool ng = needs_grad(z) || needs_grad(base);
  const Var v = push(shape(z), std::move(out), ng);
  if (ng) {
    nodes_[v].back = [this, v, z, base, floor] {
      const auto& go = nodes_[v].grad;
      const auto& zv2 = value(z);
      const auto& bv2 = value(base);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T b = std::max(bv2[i], floor);
        const T s = sigmoid(zv2[i] + softplus_inverse(b));
        if (needs_grad(z)) acc(z)[i] += go[i] * s;
        // d softplus^-1(b)/db = 1 / (1 - exp(-b))
        if (needs_grad(base) && bv2[i] > floor) acc(base)[i] += go[i] * s / -std::expm1(-b);
      }
    };
  }
  return v;
}

template <class T>
typename Graph<T>::Var Graph<T>::masked_l1(Var pred, const std::vector<T>& target, const std::vector<T>& alpha) {
  const Shape s = shape(pred);
  if (!(target.size() == s.size() && alpha.size() == s.plane())) fail(ErrorCode::kDimensionMismatch,
          "loss buffers do not match prediction " + to_string(s));
  T wsum = T(0);
  for (T a : alpha) wsum += a;
  require(wsum > T(0), ErrorCode::kEmptyRegion, "loss mask is empty");
  const T norm = T(1) / (static_cast<T>(s.c) * wsum);
  const auto& pv = value(pred);
  T sum = T(0);
  for (int c = 0; c < s.c; ++c)
    for (std::size_t p = 0; p < s.plane(); ++p) {
      const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
      branch(pv[i] > target[i] ? 2 : pv[i] < target[i] ? 0 : 1);
      sum += alpha[p] * std::abs(pv[i] - target[i]);
    }
  const Var v = push({1, 1, 1}, {sum * norm}, needs_grad(pred));
  if (needs_grad(pred)) {
    auto tgt = std::make_shared<std::vector<T>>(target);
    auto al = std::make_shared<std::vector<T>>(alpha);
    nodes_[v].back = [this, v, pred, tgt, al, norm, s] {
      const T g = nodes_[v].grad[0] * norm;
      const auto& pv2 = value(pred);
      auto& gp = acc(pred);
      for (int c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p) {
          const std::size_t i = static_cast<std::size_t>(c) * s.plane() + p;
          const T d = pv2[i] - (*tgt)[i];
          if (d != T(0)) gp[i] += g * (*al)[p] * (d > T(0) ? T(1) : T(-1));
        }
    };
  }
  return v;
}

// ---------------------------------------------------------------------- Adam

template <class T>
void Adam<T>::step(ParamStore<T>& store, const std::string& prefix, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (auto& p : store.params()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    auto& [m, v] = moments_[p.name];
    if (m.empty()) {
      m.assign(p.size(), T(0));
      v.assign(p.size(), T(0));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      if (!std::isfinite(g)) fail(ErrorCode::kDivergence, "non-finite gradient in '" + p.name + "'");
      m[i] = static_cast<T>(options_.beta1 * m[i] + (1.0 - options_.beta1) * g);
      v[i] = static_cast<T>(options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p.value[i] = static_cast<T>(p.value[i] - learning_rate * mh / (std::sqrt(vh) + options_.epsilon));
      p.grad[i] = T(0);
    }
  }
}

template <class T>
std::vector<T> kaiming_uniform(std::size_t count, int fan_in, std::mt19937_64& rng, double slope) {
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> out(count);
  for (auto& e : out) e = static_cast<T>(u(rng));
  return out;
}

double grad_check(const LossBuilder<double>& build_loss, const LossBuilder<long double>& reference,
                  ParamStore<double>& params, int samples, std::uint64_t seed, double step, GradCheckStats* stats,
                  double min_step) {
  params.zero_grad();
  {
    Graph<double> g;
    const auto loss = build_loss(g, params);
    g.backward(loss);
  }
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t pi = 0; pi < params.count(); ++pi)
    for (std::size_t i = 0; i < params.params()[pi].size(); ++i) all.emplace_back(pi, i);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (all.size() > static_cast<std::size_t>(samples)) all.resize(static_cast<std::size_t>(samples));

  ParamStore<long double> wide = params.cast<long double>();
  auto eval = [&] {
    Graph<long double> g;
    g.track_branches(true);
    const long double v = g.value(reference(g, wide))[0];
    return std::pair{v, g.branch_signature()};
  };
  const std::uint64_t signature = eval().second;
  GradCheckStats local;
  double worst = 0.0;
  for (const auto& [pi, i] : all) {
    const double ad = params.params()[pi].grad[i];
    Param<long double>& p = wide.params()[pi];
    if (!std::isfinite(ad)) fail(ErrorCode::kDivergence, "non-finite gradient in '" + p.name + "'");
    const long double orig = p.value[i];
    std::optional<double> fd;
    for (double h = step; h >= min_step * (1.0 - 1e-12); h /= 10.0) {
      p.value[i] = orig + h;
      const auto up = eval();
      p.value[i] = orig - h;
      const auto down = eval();
      p.value[i] = orig;
      if (up.second == signature && down.second == signature) {
        fd = static_cast<double>((up.first - down.first) / (2.0L * h));
        break;
      }
      ++local.refined;
    }
    if (!fd) {
      ++local.skipped;
      continue;
    }
    ++local.checked;
    const double err = std::abs(ad - *fd) / std::max({std::abs(ad), std::abs(*fd), 1e-8});
    worst = std::max(worst, err);
  }
  params.zero_grad();
  if (stats) *stats = local;
  return worst;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamStore<long double>;
template class Graph<float>;
template class Graph<double>;
template class Graph<long double>;
template class Adam<float>;
template class Adam<double>;
template std::vector<float> kaiming_uniform<float>(std::size_t, int, std::mt19937_64&, double);
template std::vector<double> kaiming_uniform<double>(std::size_t, int, std::mt19937_64&, double);

}  // namespace lightdiff::nn
