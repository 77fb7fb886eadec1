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

#include "gcu/fusion.hpp"

#include <cmath>

namespace gcu {

Conv2dLayer make_conv2d(ParamRegistry& reg, const std::string& prefix,
                        int64_t c_in, int64_t c_out, int64_t k,
                        int64_t padding, ParamKind kind, Rng& rng,
                        bool with_bias, int64_t stride) {
  Conv2dLayer layer;
  const double fan_in = static_cast<double>(c_in * k * k);
  const double fan_out = static_cast<double>(c_out * k * k);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  layer.weight = reg.add(prefix + ".weight",
                         Tensor::uniform({c_out, c_in, k, k}, rng, -bound,
                                         bound, true),
                         kind);
  if (with_bias) {
    layer.bias = reg.add(prefix + ".bias", Tensor::zeros({c_out}, true), kind);
  }
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor expand_channel_gate(const Tensor& gate, const Shape& like) {
  if (gate.ndim() != 2 || like.size() != 4 || gate.dim(0) != like[0] ||
      gate.dim(1) != like[1]) {
    throw ShapeError("expand_channel_gate: gate must be [B,C] matching " +
                     shape_str(like));
  }
  return broadcast_to(reshape(gate, {gate.dim(0), gate.dim(1), 1, 1}), like);
}

Tensor SgafBlock::forward(const Tensor& x_local, const Tensor& x_global) const {
  if (x_local.shape() != x_global.shape()) {
    throw ShapeError("sgaf: local/global shape mismatch " +
                     shape_str(x_local.shape()) + " vs " +
                     shape_str(x_global.shape()));
  }
  Tensor x_fusion = add(x_local, x_global);
  Tensor p_local = global_avg_pool(x_local);
  Tensor p_global = global_avg_pool(x_global);
  Tensor p_fusion = global_avg_pool(x_fusion);

  // Four graphs, two convolutions: the fusion graphs share each stream's layer.
  Tensor g_local = channel_gates(gc_local, p_local);
  Tensor g_fusion_local = channel_gates(gc_local, p_fusion);
  Tensor g_global = channel_gates(gc_global, p_global);
  Tensor g_fusion_global = channel_gates(gc_global, p_fusion);

  Tensor gate_local =
      expand_channel_gate(mul(g_local, g_fusion_local), x_local.shape());
  Tensor gate_global =
      expand_channel_gate(mul(g_global, g_fusion_global), x_global.shape());

  Tensor refined_local = add(mul(x_local, gate_local), x_local);
  Tensor refined_global = add(mul(x_global, gate_global), x_global);
  return add(refined_local, refined_global);
}

SgafBlock make_sgaf(ParamRegistry& reg, const std::string& prefix, int64_t c,
                    Rng& rng, Activation gate_act) {
  SgafBlock blk;
  blk.gc_local = make_graph_conv(reg, prefix + ".gc_local", 1, 1, c, gate_act,
                                 rng);
  blk.gc_global = make_graph_conv(reg, prefix + ".gc_global", 1, 1, c,
                                  gate_act, rng);
  return blk;
}

Tensor CgaBlock::forward(const Tensor& x) const {
  Tensor gate = channel_gates(gc, global_avg_pool(x));
  return add(mul(x, expand_channel_gate(gate, x.shape())), x);
}

CgaBlock make_cga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, Activation gate_act) {
  CgaBlock blk;
  blk.gc = make_graph_conv(reg, prefix + ".gc", 1, 1, c, gate_act, rng);
  return blk;
}

SignSplitResult sign_split(const Tensor& p, const Tensor& y,
                           double threshold) {
  if (p.ndim() != 4 || p.dim(1) != 1 || y.ndim() != 4 ||
      p.dim(0) != y.dim(0) || p.dim(2) != y.dim(2) || p.dim(3) != y.dim(3)) {
    throw ShapeError("sign_split: p must be [B,1,H,W] matching y");
  }
  std::vector<double> mask_data(p.data().size());
  const auto& pv = p.data();
  for (size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] < 0.0 || pv[i] > 1.0) {
      throw ContractError("sign_split: probabilities must lie in [0,1]");
    }
    mask_data[i] = pv[i] > threshold ? 1.0 : 0.0;
  }
  SignSplitResult out;
  // The mask is a constant: the threshold comparison contributes no gradient.
  out.mask = Tensor::from_data(p.shape(), std::move(mask_data));
  Tensor mask_full = broadcast_to(out.mask, y.shape());
  Tensor inv_full = broadcast_to(
      add_const(scale(out.mask, -1.0), 1.0), y.shape());
  out.vessel = mul(y, mask_full);
  out.background = mul(y, inv_full);
  return out;
}

Tensor SgaBlock::forward(const Tensor& y) const {
  const int64_t b = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
  Tensor scores = softmax(selector.forward(y), 1);  // [B,2,H,W]
  Tensor p = slice(scores, 1, 1, 1);                // vessel plane
  SignSplitResult split = sign_split(p, y, threshold);

  Tensor z_spatial = split.vessel;
  for (int64_t bi = 0; bi < b; ++bi) {
    // Mask plane for this element; positions only, so no gradient is needed.
    std::vector<double> mb(static_cast<size_t>(h * w));
    const auto& mv = split.mask.data();
    for (int64_t i = 0; i < h * w; ++i) {
      mb[static_cast<size_t>(i)] = mv[static_cast<size_t>(bi * h * w + i)];
    }
    Tensor mask_b = Tensor::from_data({h, w}, std::move(mb));
    Tensor feat_b = reshape(slice(split.vessel, 0, bi, 1), {c, h, w});
    Graph g = build_spatial_vessel_graph(mask_b, feat_b, max_nodes, knn_k,
                                         seed + static_cast<uint64_t>(bi));
    if (g.empty()) continue;  // all-background: vessel branch stays as-is
    Graph refined = graph_conv(gc_spatial, g);
    z_spatial = scatter_nodes(z_spatial, bi, g.positions,
                              refined.node_features);
  }

  Tensor g_channel =
      channel_gates(gc_channel_vessel, global_avg_pool(split.vessel));
  Tensor gated = mul(expand_channel_gate(g_channel, z_spatial.shape()),
                     z_spatial);
  return add(gated, split.background);
}

SgaBlock make_sga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, double threshold, int64_t max_nodes,
                  int64_t knn_k) {
  SgaBlock blk;
  blk.selector = make_conv2d(reg, prefix + ".selector", c, 2, 1, 0,
                             ParamKind::Conv, rng);
  // Near-identity init keeps vessel features intact before training shapes
  // the refinement.
  blk.gc_spatial =
      make_graph_conv(reg, prefix + ".gc_spatial", c, c, 0, Activation::Relu,
                      rng, GraphWeightInit::NearIdentity);
  blk.gc_channel_vessel = make_graph_conv(reg, prefix + ".gc_channel_vessel",
                                          1, 1, c, Activation::Sigmoid, rng);
  blk.threshold = threshold;
  blk.max_nodes = max_nodes;
  blk.knn_k = knn_k;
  blk.seed = rng.fork(0x5a67).seed();
  return blk;
}

BgaBlock make_bga(ParamRegistry& reg, const std::string& prefix, int64_t c,
                  Rng& rng, double threshold, int64_t max_nodes,
                  int64_t knn_k) {
  BgaBlock blk;
  blk.cga = make_cga(reg, prefix + ".cga", c, rng);
  blk.sga = make_sga(reg, prefix + ".sga", c, rng, threshold, max_nodes,
                     knn_k);
  return blk;
}

Tensor MsgfBlock::forward(const Tensor& xa, const Tensor& xb,
                          const Tensor& xc) const {
  const int64_t ha = xa.dim(2), wa = xa.dim(3);
  if (xb.dim(2) * factor_b != ha || xb.dim(3) * factor_b != wa ||
      xc.dim(2) * factor_c != ha || xc.dim(3) * factor_c != wa) {
    throw ConfigError("msgf: scales do not align by integer factors");
  }
  Tensor xb_al = upsample_nearest(align_b.forward(xb), factor_b);
  Tensor xc_al = upsample_nearest(align_c.forward(xc), factor_c);
  const std::vector<Tensor> streams = {xa, xb_al, xc_al};

  std::vector<Tensor> gates;
  gates.reserve(3);
  switch (mode) {
    case MsgfMode::Shared:
      for (const Tensor& s : streams) {
        gates.push_back(channel_gates(gcs[0], global_avg_pool(s)));
      }
      break;
    case MsgfMode::Individual:
      for (size_t i = 0; i < 3; ++i) {
        gates.push_back(channel_gates(gcs[i], global_avg_pool(streams[i])));
      }
      break;
    case MsgfMode::Concat: {
      std::vector<Tensor> pooled;
      pooled.reserve(3);
      for (const Tensor& s : streams) pooled.push_back(global_avg_pool(s));
      Tensor all = channel_gates(gcs[0], concat(pooled, 1));  // [B, 3C]
      const int64_t c = xa.dim(1);
      for (int64_t i = 0; i < 3; ++i) {
        gates.push_back(slice(all, 1, i * c, c));
      }
      break;
    }
  }

  std::vector<Tensor> refined;
  refined.reserve(3);
  for (size_t i = 0; i < 3; ++i) {
    Tensor gate = expand_channel_gate(gates[i], streams[i].shape());
    refined.push_back(add(mul(streams[i], gate), streams[i]));
  }
  return fuse.forward(concat(refined, 1));
}

MsgfBlock make_msgf(ParamRegistry& reg, const std::string& prefix, int64_t c_a,
                    int64_t c_b, int64_t c_c, int64_t factor_b,
                    int64_t factor_c, MsgfMode mode, Rng& rng,
                    Activation gate_act) {
  if (factor_b < 1 || factor_c < 1) {
    throw ConfigError("msgf: upsampling factors must be >= 1");
  }
  MsgfBlock blk;
  blk.mode = mode;
  blk.factor_b = factor_b;
  blk.factor_c = factor_c;
  blk.align_b = make_conv2d(reg, prefix + ".align_b", c_b, c_a, 1, 0,
                            ParamKind::Conv, rng);
  blk.align_c = make_conv2d(reg, prefix + ".align_c", c_c, c_a, 1, 0,
                            ParamKind::Conv, rng);
  switch (mode) {
    case MsgfMode::Shared:
      blk.gcs.push_back(
          make_graph_conv(reg, prefix + ".gc_shared", 1, 1, c_a, gate_act, rng));
      break;
    case MsgfMode::Individual:
      for (int i = 0; i < 3; ++i) {
        blk.gcs.push_back(make_graph_conv(reg,
                                          prefix + ".gc" + std::to_string(i),
                                          1, 1, c_a, gate_act, rng));
      }
      break;
    case MsgfMode::Concat:
      blk.gcs.push_back(make_graph_conv(reg, prefix + ".gc_concat", 1, 1,
                                        3 * c_a, gate_act, rng));
      break;
  }
  blk.fuse = make_conv2d(reg, prefix + ".fuse", 3 * c_a, c_a, 1, 0,
                         ParamKind::Conv, rng);
  return blk;
}

}  // namespace gcu
