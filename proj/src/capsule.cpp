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

#include "gcu/capsule.hpp"

#include <cmath>

namespace gcu {

CapsuleTensor to_primary_capsules(const Tensor& feat, const Tensor& proj_w,
                                  const Tensor& proj_b, int64_t l, int64_t v,
                                  int64_t k) {
  if (feat.ndim() != 4) {
    throw ShapeError("to_primary_capsules: rank-4 input required");
  }
  if (l < 1 || v < 1 || k < 1) {
    throw ConfigError("to_primary_capsules: L, V, K must be positive");
  }
  const int64_t b = feat.dim(0), c = feat.dim(1), h = feat.dim(2),
                w = feat.dim(3);
  const int64_t clv = proj_w.dim(0);
  if (proj_w.ndim() != 2 || proj_w.dim(1) != c) {
    throw ShapeError("to_primary_capsules: projection must be [Ccap*L*V, C]");
  }
  if (clv % (l * v) != 0) {
    throw ConfigError(
        "to_primary_capsules: projection rows are not divisible by L*V");
  }
  const int64_t ccap = clv / (l * v);
  const int64_t kk = k * k;

  // [B,C,H,W] -> [B,K^2,C,H,W] -> [B,K^2,H,W,C] -> [R = B*K^2*H*W, C]
  Tensor windows = k == 1 ? reshape(feat, {b, 1, c, h, w}) : unfold(feat, k);
  Tensor rows = reshape(permute(windows, {0, 1, 3, 4, 2}), {b * kk * h * w, c});
  Tensor projected = matmul(rows, permute(proj_w, {1, 0}));  // [R, Ccap*L*V]
  if (proj_b.defined()) {
    projected = add(projected, broadcast_to(reshape(proj_b, {1, clv}),
                                            {b * kk * h * w, clv}));
  }
  // [B,K^2,H,W,Ccap,L,V] -> [B,H,W,K^2,Ccap,L,V]
  Tensor caps = permute(reshape(projected, {b, kk, h, w, ccap, l, v}),
                        {0, 2, 3, 1, 4, 5, 6});
  CapsuleTensor out;
  out.data = caps;
  out.caps_l = l;
  out.atoms_v = v;
  out.kernel_k = k;
  return out;
}

Tensor capsules_to_feature(const CapsuleTensor& caps, const Tensor& out_w,
                           const Tensor& out_b) {
  const Tensor& d = caps.data;
  const int64_t b = d.dim(0), h = d.dim(1), w = d.dim(2);
  const int64_t flat = d.dim(3) * d.dim(4) * d.dim(5) * d.dim(6);
  if (out_w.ndim() != 2 || out_w.dim(0) != flat) {
    throw ShapeError("capsules_to_feature: projection must be [K^2*C*L*V, C']");
  }
  const int64_t c_out = out_w.dim(1);
  Tensor rows = reshape(d, {b * h * w, flat});
  Tensor projected = matmul(rows, out_w);  // [B*H*W, C']
  if (out_b.defined()) {
    projected = add(projected, broadcast_to(reshape(out_b, {1, c_out}),
                                            {b * h * w, c_out}));
  }
  return permute(reshape(projected, {b, h, w, c_out}), {0, 3, 1, 2});
}

CapsuleTensor dynamic_routing(const CapsuleTensor& lower,
                              const Tensor& transform, int64_t iterations,
                              RoutingTrace* trace) {
  if (iterations < 1) {
    throw ConfigError("dynamic_routing: iterations must be >= 1");
  }
  if (transform.ndim() != 4) {
    throw ShapeError("dynamic_routing: transform must be [Lin, Lout, Vin, Vout]");
  }
  const int64_t l_in = transform.dim(0), l_out = transform.dim(1);
  const int64_t v_in = transform.dim(2), v_out = transform.dim(3);
  if (lower.caps_l != l_in || lower.atoms_v != v_in) {
    throw ShapeError("dynamic_routing: capsule layout does not match transform");
  }
  const Tensor& d = lower.data;
  const int64_t p = d.numel() / (l_in * v_in);  // B*H*W*K^2*C positions

  // Predictions u_hat[p, i, j, :] = transform[i, j] . lower[p, i, :].
  Tensor flat = reshape(d, {p, l_in, v_in});
  std::vector<Tensor> per_lower;
  per_lower.reserve(static_cast<size_t>(l_in));
  for (int64_t i = 0; i < l_in; ++i) {
    Tensor u_i = reshape(slice(flat, 1, i, 1), {p, v_in});
    // [Lout, Vin, Vout] -> [Vin, Lout*Vout]
    Tensor t_i = reshape(permute(reshape(slice(transform, 0, i, 1),
                                         {l_out, v_in, v_out}),
                                 {1, 0, 2}),
                         {v_in, l_out * v_out});
    per_lower.push_back(reshape(matmul(u_i, t_i), {p, 1, l_out, v_out}));
  }
  Tensor u_hat = l_in == 1 ? per_lower[0] : concat(per_lower, 1);

  Tensor logits = Tensor::zeros({p, l_in, l_out});
  Tensor upper;
  for (int64_t it = 0; it < iterations; ++it) {
    Tensor couplings = softmax(logits, 2);
    if (trace) trace->couplings.push_back(couplings);
    Tensor cb = broadcast_to(reshape(couplings, {p, l_in, l_out, 1}),
                             {p, l_in, l_out, v_out});
    Tensor s = sum_axes(mul(cb, u_hat), {1}, false);  // [P, Lout, Vout]
    upper = squash(s);
    if (it + 1 < iterations) {
      Tensor vb = broadcast_to(reshape(upper, {p, 1, l_out, v_out}),
                               {p, l_in, l_out, v_out});
      Tensor agreement = sum_axes(mul(u_hat, vb), {3}, false);
      logits = add(logits, agreement);
    }
  }

  CapsuleTensor out;
  Shape shape = d.shape();
  shape[5] = l_out;
  shape[6] = v_out;
  out.data = reshape(upper, std::move(shape));
  out.caps_l = l_out;
  out.atoms_v = v_out;
  out.kernel_k = lower.kernel_k;
  return out;
}

Tensor CapsuleConvBlock::forward(const Tensor& x) const {
  CapsuleTensor primary =
      to_primary_capsules(x, proj_w, proj_b, cfg.caps_l, cfg.atoms_v,
                          cfg.kernel_k);
  CapsuleTensor routed =
      dynamic_routing(primary, transform, cfg.routing_iterations);

  if (cfg.gate != CapsGateMode::Off) {
    const Tensor& d = primary.data;  // [B,H,W,K^2,Ccap,L,V]
    const int64_t b = d.dim(0), ccap = d.dim(4);
    const int64_t lv = cfg.caps_l * cfg.atoms_v;
    // Channel view pools capsules/atoms away; capsule-atom view pools the
    // capsule channels away. Both then pool H, W and K^2.
    Tensor pooled_channel =
        reshape(mean_axes(d, {1, 2, 3, 5, 6}, false), {b, ccap, 1, 1});
    Tensor pooled_capatom =
        reshape(mean_axes(d, {1, 2, 3, 4}, false), {b, lv, 1, 1});

    Tensor g_channel = channel_gates(gc_channel, pooled_channel);   // [B,Ccap]
    Tensor g_capatom = channel_gates(gc_capatom, pooled_capatom);   // [B,L*V]

    Tensor g_sum = add(
        broadcast_to(reshape(g_channel, {b, 1, 1, 1, ccap, 1, 1}), d.shape()),
        broadcast_to(reshape(g_capatom, {b, 1, 1, 1, 1, cfg.caps_l, cfg.atoms_v}),
                     d.shape()));
    Tensor gate = cfg.gate == CapsGateMode::Sigmoid ? sigmoid(g_sum)
                                                    : add_const(g_sum, 1.0);
    routed.data = mul(routed.data, gate);
  }
  return capsules_to_feature(routed, out_w, out_b);
}

CapsuleConvBlock make_capsule_conv(ParamRegistry& reg,
                                   const std::string& prefix, int64_t c_in,
                                   int64_t c_out, const CapsuleConvConfig& cfg,
                                   Rng& rng) {
  if (cfg.caps_l < 1 || cfg.atoms_v < 1 || cfg.kernel_k < 1 ||
      cfg.caps_channels < 1 || cfg.routing_iterations < 1) {
    throw ConfigError("capsule conv: all capsule extents must be positive");
  }
  CapsuleConvBlock blk;
  blk.cfg = cfg;
  const int64_t clv = cfg.caps_channels * cfg.caps_l * cfg.atoms_v;
  const int64_t kk = cfg.kernel_k * cfg.kernel_k;

  const double pb = std::sqrt(6.0 / static_cast<double>(c_in + clv));
  blk.proj_w = reg.add(prefix + ".proj.weight",
                       Tensor::uniform({clv, c_in}, rng, -pb, pb, true),
                       ParamKind::Capsule);
  blk.proj_b = reg.add(prefix + ".proj.bias", Tensor::zeros({clv}, true),
                       ParamKind::Capsule);

  const double tb =
      std::sqrt(6.0 / static_cast<double>(cfg.atoms_v + cfg.atoms_v));
  blk.transform = reg.add(
      prefix + ".routing.transform",
      Tensor::uniform({cfg.caps_l, cfg.caps_l, cfg.atoms_v, cfg.atoms_v}, rng,
                      -tb, tb, true),
      ParamKind::Capsule);

  const int64_t flat = kk * clv;
  const double ob = std::sqrt(6.0 / static_cast<double>(flat + c_out));
  blk.out_w = reg.add(prefix + ".out.weight",
                      Tensor::uniform({flat, c_out}, rng, -ob, ob, true),
                      ParamKind::Capsule);
  blk.out_b = reg.add(prefix + ".out.bias", Tensor::zeros({c_out}, true),
                      ParamKind::Capsule);

  if (cfg.gate != CapsGateMode::Off) {
    blk.gc_channel =
        make_graph_conv(reg, prefix + ".gc_channel", 1, 1, cfg.caps_channels,
                        Activation::Linear, rng);
    blk.gc_capatom =
        make_graph_conv(reg, prefix + ".gc_capatom", 1, 1,
                        cfg.caps_l * cfg.atoms_v, Activation::Linear, rng);
  }
  return blk;
}

}  // namespace gcu
