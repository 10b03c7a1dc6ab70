// Copyright 2026 The ddad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ddad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddad/errors.hpp"

namespace ddad::ops {

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value (shape " +
                       shape_str(t.shape()) + ")");
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// Strides of `shape` aligned to `out`, zero along broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t offset = out.size() - shape.size();
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i + offset] = shape[i] == 1 ? 0 : stride;
    stride *= shape[i];
  }
  return strides;
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, F f, const char* name) {
  Tensor out;
  if (a.shape() == b.shape()) {
    out = Tensor(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  } else if (b.numel() == 1) {
    out = Tensor(a.shape());
    const double s = b[0];
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], s);
  } else if (a.numel() == 1) {
    out = Tensor(b.shape());
    const double s = a[0];
    auto o = out.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(s, y[i]);
  } else {
    const Shape shape = broadcast_shape(a.shape(), b.shape());
    out = Tensor(shape);
    const auto sa = broadcast_strides(a.shape(), shape);
    const auto sb = broadcast_strides(b.shape(), shape);
    std::vector<std::size_t> idx(shape.size(), 0);
    std::size_t ia = 0, ib = 0;
    auto o = out.data();
    for (std::size_t k = 0; k < o.size(); ++k) {
      o[k] = f(a[ia], b[ib]);
      for (std::size_t d = shape.size(); d-- > 0;) {
        ++idx[d];
        ia += sa[d];
        ib += sb[d];
        if (idx[d] < shape[d]) break;
        ia -= sa[d] * shape[d];
        ib -= sb[d] * shape[d];
        idx[d] = 0;
      }
    }
  }
  check_finite(out, name);
  return out;
}

template <typename F>
Tensor unary(const Tensor& a, F f, const char* name) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  check_finite(out, name);
  return out;
}

void require_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor reduce_to_shape(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  if (shape_numel(shape) == 1) return Tensor(shape, sum(t)[0]);
  Shape full = broadcast_shape(t.shape(), shape);
  if (full != t.shape()) {
    throw ShapeError("cannot reduce " + shape_str(t.shape()) + " to " + shape_str(shape));
  }
  Tensor out(shape);
  const auto so = broadcast_strides(shape, full);
  std::vector<std::size_t> idx(full.size(), 0);
  std::size_t io = 0;
  for (std::size_t k = 0; k < t.numel(); ++k) {
    out[io] += t[k];
    for (std::size_t d = full.size(); d-- > 0;) {
      ++idx[d];
      io += so[d];
      if (idx[d] < full[d]) break;
      io -= so[d] * full[d];
      idx[d] = 0;
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x + y; }, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x - y; }, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x * y; }, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x / y; }, "div");
}
Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, "scale");
}
Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, "add_scalar");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  return out;
}

Tensor mean(const Tensor& a) {
  Tensor out = sum(a);
  out[0] /= static_cast<double>(a.numel());
  return out;
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_2d(a, "sum_axis");
  const std::size_t n = a.dim(0), m = a.dim(1);
  if (axis == 0) {
    Tensor out({1, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[j] += a.at(i, j);
    check_finite(out, "sum_axis");
    return out;
  }
  if (axis == 1) {
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += a.at(i, j);
      out[i] = s;
    }
    check_finite(out, "sum_axis");
    return out;
  }
  throw ShapeError("sum_axis: axis must be 0 or 1");
}

Tensor trace(const Tensor& a) {
  require_2d(a, "trace");
  if (a.dim(0) != a.dim(1)) throw ShapeError("trace of non-square " + shape_str(a.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i) s += a.at(i, i);
  return Tensor::scalar(s);
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, "exp");
}
Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, "log");
}
Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, "square");
}
Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, "sqrt");
}
Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, "relu");
}
Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      "sigmoid");
}
Tensor clip(const Tensor& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); }, "clip");
}
Tensor maximum(const Tensor& a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; }, "maximum");
}
Tensor sign(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "sign");
}

Tensor log_softmax(const Tensor& a) {
  require_2d(a, "log_softmax");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    auto x = a.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < x.size(); ++j) o[j] = x[j] - lse;
  }
  check_finite(out, "log_softmax");
  return out;
}

Tensor softmax(const Tensor& a) { return exp(log_softmax(a)); }

Tensor pairwise_sqdist(const Tensor& x, const Tensor& z) {
  require_2d(x, "pairwise_sqdist");
  require_2d(z, "pairwise_sqdist");
  if (x.dim(1) != z.dim(1)) {
    throw ShapeError("pairwise_sqdist: feature extents differ, " + shape_str(x.shape()) +
                     " vs " + shape_str(z.shape()));
  }
  const std::size_t n = x.dim(0), m = z.dim(0), d = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* zj = z.data().data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - zj[k];
        s += diff * diff;
      }
      out.at(i, j) = s;
    }
  }
  check_finite(out, "pairwise_sqdist");
  return out;
}

}  // namespace ddad::ops
