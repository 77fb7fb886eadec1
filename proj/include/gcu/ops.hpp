// Copyright 2026 The GCC-UNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GCU_OPS_HPP_
#define GCU_OPS_HPP_

#include <vector>

#include "gcu/tensor.hpp"

namespace gcu {

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
// Multiplies every element by a one-element tensor (e.g. a [1,1] weight).
Tensor scale_by(const Tensor& a, const Tensor& s);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int64_t>& perm);
Tensor concat(const std::vector<Tensor>& ts, int64_t axis);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len);
// Expands axes of extent 1 up to `shape` (same rank).
Tensor broadcast_to(const Tensor& a, const Shape& shape);

// Reductions.
Tensor sum_all(const Tensor& a);
Tensor sum_axes(const Tensor& a, const std::vector<int64_t>& axes,
                bool keepdim);
Tensor mean_axes(const Tensor& a, const std::vector<int64_t>& axes,
                 bool keepdim);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);

// Neural-net primitives.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int64_t stride, int64_t padding);
Tensor max_pool2x2(const Tensor& input);
Tensor global_avg_pool(const Tensor& input);
Tensor softmax(const Tensor& input, int64_t axis);
Tensor upsample_nearest(const Tensor& input, int64_t factor);
// [B,C,H,W] -> [B,K^2,C,H,W]; gathers KxK same-padded windows per pixel.
Tensor unfold(const Tensor& input, int64_t k);

// Capsule nonlinearity over the last axis: v = s * |s| / (1 + |s|^2),
// with v = 0 at s = 0. Always |v| < 1.
Tensor squash(const Tensor& s);

// Identity in value; blocks gradient flow.
Tensor stop_gradient(const Tensor& a);

// Node gather/scatter for spatial graphs. Positions are (row, col) pairs
// flattened as row*W+col offsets into one batch element's planes.
Tensor gather_nodes(const Tensor& x, int64_t batch_index,
                    const std::vector<int64_t>& positions);
Tensor scatter_nodes(const Tensor& base, int64_t batch_index,
                     const std::vector<int64_t>& positions,
                     const Tensor& nodes);

// Mean cross-entropy over field-of-view pixels. logits [B,2,H,W],
// target/fov [B,H,W] binary constants.
Tensor cross_entropy(const Tensor& logits, const Tensor& target,
                     const Tensor& fov);

}  // namespace gcu

#endif  // GCU_OPS_HPP_
