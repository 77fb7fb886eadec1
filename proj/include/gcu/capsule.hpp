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

#ifndef GCU_CAPSULE_HPP_
#define GCU_CAPSULE_HPP_

#include <string>
#include <vector>

#include "gcu/graph.hpp"
#include "gcu/ops.hpp"
#include "gcu/tensor.hpp"

namespace gcu {

/// Tensor interpreted with axes [B, H, W, K^2, C, L, V]: K^2 window
/// positions, C capsule channels, L capsules of V atoms each.
struct CapsuleTensor {
  Tensor data;
  int64_t caps_l = 0;
  int64_t atoms_v = 0;
  int64_t kernel_k = 0;

  int64_t batch() const { return data.dim(0); }
  int64_t height() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }
  int64_t channels() const { return data.dim(4); }
};

/// Window-gather (K x K, same padding) followed by a learned 1x1 projection
/// of the C input channels to Ccap*L*V capsule channels per window offset,
/// laid out as [B, H, W, K^2, Ccap, L, V]. proj_w is [Ccap*L*V, C].
CapsuleTensor to_primary_capsules(const Tensor& feat, const Tensor& proj_w,
                                  const Tensor& proj_b, int64_t l, int64_t v,
                                  int64_t k);

/// Collapses the [K^2, C, L, V] axes and applies a learned 1x1 projection to
/// out_channels. out_w is [K^2*C*L*V, out_channels].
Tensor capsules_to_feature(const CapsuleTensor& caps, const Tensor& out_w,
                           const Tensor& out_b);

/// Per-iteration routing state (couplings are recorded for inspection).
struct RoutingTrace {
  std::vector<Tensor> couplings;  // [P, L_in, L_out] per iteration
};

/// Agreement routing between the L lower capsules and L upper capsules at
/// every (batch, pixel, window, channel) position. transform has shape
/// [L_in, L_out, V_in, V_out]; couplings stay on the tape.
CapsuleTensor dynamic_routing(const CapsuleTensor& lower,
                              const Tensor& transform, int64_t iterations,
                              RoutingTrace* trace = nullptr);

enum class CapsGateMode {
  Sigmoid,         // gate = sigmoid(g_channel + g_capatom), multiplied on
  LinearResidual,  // gate = 1 + (g_channel + g_capatom); identity at zero
  Off,             // plain capsule convolution, no graph path
};

struct CapsuleConvConfig {
  int64_t caps_l = 4;
  int64_t atoms_v = 4;
  int64_t kernel_k = 3;
  int64_t caps_channels = 4;
  int64_t routing_iterations = 3;
  CapsGateMode gate = CapsGateMode::Sigmoid;
};

/// Graph Capsule Convolution: projects features to primary capsules, routes
/// them, gates the routed capsules with channel-graph and capsule-atom-graph
/// attention, and projects back to a feature map.
struct CapsuleConvBlock {
  CapsuleConvConfig cfg;
  Tensor proj_w, proj_b;
  Tensor transform;
  Tensor out_w, out_b;
  GraphConvLayer gc_channel;  // N = caps_channels; undefined in Off mode
  GraphConvLayer gc_capatom;  // N = L*V; undefined in Off mode

  Tensor forward(const Tensor& x) const;
};

CapsuleConvBlock make_capsule_conv(ParamRegistry& reg,
                                   const std::string& prefix, int64_t c_in,
                                   int64_t c_out, const CapsuleConvConfig& cfg,
                                   Rng& rng);

}  // namespace gcu

#endif  // GCU_CAPSULE_HPP_
