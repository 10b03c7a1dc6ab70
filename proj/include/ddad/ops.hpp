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

#pragma once

#include <cstddef>
#include <span>

#include "ddad/tensor.hpp"

// Untaped tensor primitives. Every function validates operand shapes and
// throws NumericError if the result contains NaN or Inf.
namespace ddad::ops {

Shape broadcast_shape(const Shape& a, const Shape& b);
/// Sums a broadcast result back down to `shape`.
Tensor reduce_to_shape(const Tensor& t, const Shape& shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

/// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sums a 2-D tensor along `axis`, keeping the reduced axis with extent 1.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor trace(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);
Tensor maximum(const Tensor& a, double floor);
Tensor sign(const Tensor& a);

/// Row-wise log-softmax over a 2-D tensor using max subtraction.
Tensor log_softmax(const Tensor& a);
Tensor softmax(const Tensor& a);

/// D[i,j] = ||x_i - z_j||^2 for row sets X [n,d] and Z [m,d].
Tensor pairwise_sqdist(const Tensor& x, const Tensor& z);

void check_finite(const Tensor& t, const char* op);

}  // namespace ddad::ops
