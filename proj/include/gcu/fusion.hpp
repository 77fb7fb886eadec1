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

#ifndef GCU_FUSION_HPP_
#define GCU_FUSION_HPP_

#include <string>
#include <vector>

#include "gcu/graph.hpp"
#include "gcu/ops.hpp"
#include "gcu/tensor.hpp"

namespace gcu {

struct Conv2dLayer {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout] or undefined
  int64_t stride = 1;
  int64_t padding = 0;

  bool defined() const { return weight.defined(); }
  Tensor forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
};

Conv2dLayer make_conv2d(ParamRegistry& reg, const std::string& prefix,
                        int64_t c_in, int64_t c_out, int64_t k,
                        int64_t padding, ParamKind kind, Rng& rng,
                        bool with_bias = true, int64_t stride = 1);

/// Broadcasts per-channel values [B, C] over the spatial axes of `like`.
Tensor expand_channel_gate(const Tensor& gate, const Shape& like);

/// Selective fusion of a local (CNN) and a global (capsule) stream through
/// channel-graph self-attention. Exactly two graph convolutions serve the
/// four constructed graphs: each stream's own graph and the shared-fusion
/// graph both go through that stream's layer.
struct SgafBlock {
  GraphConvLayer gc_local;
  GraphConvLayer gc_global;

  Tensor forward(const Tensor& x_local, const Tensor& x_global) const;
};

SgafBlock make_sgaf(ParamRegistry& reg, const std::string& prefix, int64_t c,
                    Rng& rng, Activation gate_act = Activation::Sigmoid);

/// Channel graph attention: y = x * Expand(gate(GC(pool(x)))) + x.
struct CgaBlock {
  GraphConvLayer gc;
  Tensor forward(const Tensor& x) const;
};

CgaBlock make_cga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, Activation gate_act = Activation::Sigmoid);

struct SignSplitResult {
  Tensor vessel;
  Tensor background;
  Tensor mask;  // [B,1,H,W] constant; excluded from gradient flow
};

/// Hard threshold split of features by a probability plane. The mask is a
/// constant in the backward pass; exactly vessel + background == y holds.
SignSplitResult sign_split(const Tensor& p, const Tensor& y, double threshold);

/// Spatial graph attention: a 1x1 selector + softmax scores every pixel,
/// pixels above the threshold form a vessel graph that is refined and
/// scattered back, a channel gate re-weights the result, and background
/// features pass through unchanged.
struct SgaBlock {
  Conv2dLayer selector;
  GraphConvLayer gc_spatial;
  GraphConvLayer gc_channel_vessel;
  double threshold = 0.4;
  int64_t max_nodes = 256;
  int64_t knn_k = 8;
  uint64_t seed = 0;

  Tensor forward(const Tensor& y) const;
};

SgaBlock make_sga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, double threshold = 0.4, int64_t max_nodes = 256,
                  int64_t knn_k = 8);

/// Bottleneck graph attention: CGA followed by SGA.
struct BgaBlock {
  CgaBlock cga;
  SgaBlock sga;
  Tensor forward(const Tensor& x) const { return sga.forward(cga.forward(x)); }
};

BgaBlock make_bga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, double threshold = 0.4, int64_t max_nodes = 256,
                  int64_t knn_k = 8);

enum class MsgfMode { Shared, Concat, Individual };

/// Multi-scale fusion of three decoder outputs. The two coarser streams are
/// aligned by 1x1 conv + nearest upsampling, all three are gated through
/// channel graphs (shared, concatenated, or individual convolutions), and a
/// final 1x1 conv fuses the concatenation.
struct MsgfBlock {
  Conv2dLayer align_b;
  Conv2dLayer align_c;
  int64_t factor_b = 2;
  int64_t factor_c = 4;
  std::vector<GraphConvLayer> gcs;  // 1 (Shared/Concat) or 3 (Individual)
  MsgfMode mode = MsgfMode::Shared;
  Conv2dLayer fuse;

  Tensor forward(const Tensor& xa, const Tensor& xb, const Tensor& xc) const;
};

MsgfBlock make_msgf(ParamRegistry& reg, const std::string& prefix, int64_t c_a,
                    int64_t c_b, int64_t c_c, int64_t factor_b,
                    int64_t factor_c, MsgfMode mode, Rng& rng,
                    Activation gate_act = Activation::Sigmoid);

}  // namespace gcu

#endif  // GCU_FUSION_HPP_
