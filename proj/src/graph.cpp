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

#include "gcu/graph.hpp"

#include <algorithm>
#include <cmath>

namespace gcu {

std::vector<double> normalize_adjacency(const std::vector<double>& a,
                                        int64_t n) {
  if (static_cast<int64_t>(a.size()) != n * n) {
    throw ShapeError("normalize_adjacency: matrix size mismatch");
  }
  for (double v : a) {
    if (v < 0.0) {
      throw ContractError("normalize_adjacency: adjacency must be nonnegative");
    }
  }
  std::vector<double> with_loops(a);
  for (int64_t i = 0; i < n; ++i) with_loops[static_cast<size_t>(i * n + i)] += 1.0;
  std::vector<double> dinv(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int64_t j = 0; j < n; ++j) deg += with_loops[static_cast<size_t>(i * n + j)];
    dinv[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> out(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out[static_cast<size_t>(i * n + j)] =
          dinv[static_cast<size_t>(i)] * with_loops[static_cast<size_t>(i * n + j)] *
          dinv[static_cast<size_t>(j)];
    }
  }
  return out;
}

Tensor normalize_adjacency_t(const Tensor& a) {
  if (a.ndim() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError("normalize_adjacency: square matrix required");
  }
  for (double v : a.data()) {
    if (v < 0.0) {
      throw ContractError("normalize_adjacency: adjacency must be nonnegative");
    }
  }
  const int64_t n = a.dim(0);
  Tensor with_loops = add(a, Tensor::eye(n));
  Tensor deg = sum_axes(with_loops, {1}, true);           // [N,1]
  Tensor dinv = pow_scalar(deg, -0.5);                    // [N,1]
  Tensor scalemat = matmul(dinv, reshape(dinv, {1, n}));  // [N,N]
  return mul(with_loops, scalemat);
}

Tensor apply_activation(const Tensor& t, Activation act) {
  switch (act) {
    case Activation::Linear:
      return t;
    case Activation::Relu:
      return relu(t);
    case Activation::Sigmoid:
      return sigmoid(t);
  }
  throw ConfigError("unknown activation");
}

Tensor GraphConvLayer::propagation() const {
  if (!learnable_adjacency()) {
    throw ContractError("propagation(): layer has no learnable adjacency");
  }
  // Row softmax keeps entries positive; symmetrization keeps A_hat symmetric.
  Tensor soft = softmax(adjacency_logits, 1);
  Tensor sym = scale(add(soft, permute(soft, {1, 0})), 0.5);
  return normalize_adjacency_t(sym);
}

GraphConvLayer make_graph_conv(ParamRegistry& reg, const std::string& prefix,
                               int64_t f_in, int64_t f_out, int64_t n_nodes,
                               Activation act, Rng& rng,
                               GraphWeightInit init) {
  GraphConvLayer layer;
  const double bound = std::sqrt(6.0 / static_cast<double>(f_in + f_out));
  Tensor w = Tensor::uniform({f_in, f_out}, rng, -bound, bound, true);
  if (init == GraphWeightInit::NearIdentity) {
    auto& wd = w.mutable_data();
    for (int64_t i = 0; i < f_in; ++i) {
      for (int64_t j = 0; j < f_out; ++j) {
        wd[static_cast<size_t>(i * f_out + j)] *= 0.05;
        if (i == j) wd[static_cast<size_t>(i * f_out + j)] += 1.0;
      }
    }
  }
  layer.weight = reg.add(prefix + ".weight", w, ParamKind::Graph);
  if (n_nodes > 0) {
    layer.adjacency_logits =
        reg.add(prefix + ".adjacency", Tensor::zeros({n_nodes, n_nodes}, true),
                ParamKind::Graph);
  }
  layer.act = act;
  return layer;
}

Graph graph_conv(const GraphConvLayer& layer, const Graph& g) {
  if (g.empty()) throw ContractError("graph_conv: empty graph");
  if (g.node_features.dim(1) != layer.weight.dim(0)) {
    throw ShapeError("graph_conv: feature width " +
                     std::to_string(g.node_features.dim(1)) +
                     " does not match layer input " +
                     std::to_string(layer.weight.dim(0)));
  }
  Tensor prop;
  if (layer.learnable_adjacency()) {
    if (g.adjacency.defined()) {
      throw ContractError(
          "graph_conv: graph carries an adjacency but the layer is learnable");
    }
    if (g.num_nodes() != layer.adjacency_logits.dim(0)) {
      throw ShapeError("graph_conv: node count does not match learnable N");
    }
    prop = layer.propagation();
  } else {
    if (!g.adjacency.defined()) {
      throw ContractError("graph_conv: no adjacency source");
    }
    prop = g.normalized
               ? g.adjacency
               : Tensor::from_data(
                     g.adjacency.shape(),
                     normalize_adjacency(g.adjacency.data(), g.num_nodes()));
  }
  Tensor out = apply_activation(
      matmul(matmul(prop, g.node_features), layer.weight), layer.act);
  Graph result;
  result.node_features = out;
  result.adjacency = g.adjacency;
  result.normalized = g.normalized;
  result.positions = g.positions;
  return result;
}

std::vector<Graph> graph_conv(const GraphConvLayer& layer,
                              std::span<const Graph> graphs) {
  std::vector<Graph> out;
  out.reserve(graphs.size());
  for (const Graph& g : graphs) out.push_back(graph_conv(layer, g));
  return out;
}

std::vector<Graph> build_channel_graph(const Tensor& feat) {
  if (feat.ndim() != 4 || feat.dim(2) != 1 || feat.dim(3) != 1) {
    throw ContractError(
        "build_channel_graph: input must be spatially pooled [B,C,1,1], got " +
        shape_str(feat.shape()));
  }
  const int64_t b = feat.dim(0), c = feat.dim(1);
  std::vector<Graph> graphs;
  graphs.reserve(static_cast<size_t>(b));
  for (int64_t bi = 0; bi < b; ++bi) {
    Graph g;
    g.node_features = reshape(slice(feat, 0, bi, 1), {c, 1});
    graphs.push_back(std::move(g));
  }
  return graphs;
}

Tensor channel_gates(const GraphConvLayer& layer, const Tensor& pooled) {
  auto graphs = build_channel_graph(pooled);
  const int64_t c = pooled.dim(1);
  // The propagation matrix depends only on the layer, so it is hoisted out
  // of the per-element loop; backward accumulates once per use.
  Tensor prop = layer.propagation();
  std::vector<Tensor> rows;
  rows.reserve(graphs.size());
  for (const Graph& g : graphs) {
    Tensor out = apply_activation(
        scale_by(matmul(prop, g.node_features), layer.weight), layer.act);
    rows.push_back(reshape(out, {1, c}));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

std::vector<int64_t> vessel_positions(const std::vector<double>& mask,
                                      int64_t h, int64_t w, int64_t max_nodes,
                                      uint64_t seed) {
  if (max_nodes < 1) throw ConfigError("vessel_positions: max_nodes >= 1");
  std::vector<int64_t> pos;
  for (int64_t i = 0; i < h * w; ++i) {
    const double v = mask[static_cast<size_t>(i)];
    if (v != 0.0 && v != 1.0) {
      throw ContractError("vessel_positions: mask must be binary");
    }
    if (v == 1.0) pos.push_back(i);
  }
  if (static_cast<int64_t>(pos.size()) > max_nodes) {
    // Partial Fisher-Yates with a seeded stream, then restore raster order.
    Rng rng(seed);
    for (int64_t i = 0; i < max_nodes; ++i) {
      const int64_t j = rng.uniform_int(i, static_cast<int64_t>(pos.size()) - 1);
      std::swap(pos[static_cast<size_t>(i)], pos[static_cast<size_t>(j)]);
    }
    pos.resize(static_cast<size_t>(max_nodes));
    std::sort(pos.begin(), pos.end());
  }
  return pos;
}

std::vector<double> knn_adjacency(const std::vector<int64_t>& positions,
                                  int64_t w, int64_t k) {
  if (k < 1) throw ConfigError("knn_adjacency: k >= 1");
  const int64_t n = static_cast<int64_t>(positions.size());
  std::vector<double> adj(static_cast<size_t>(n * n), 0.0);
  if (n <= 1) return adj;
  std::vector<std::pair<double, int64_t>> cand;
  for (int64_t i = 0; i < n; ++i) {
    const double yi = static_cast<double>(positions[static_cast<size_t>(i)] / w);
    const double xi = static_cast<double>(positions[static_cast<size_t>(i)] % w);
    cand.clear();
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double yj = static_cast<double>(positions[static_cast<size_t>(j)] / w);
      const double xj = static_cast<double>(positions[static_cast<size_t>(j)] % w);
      const double d2 = (yi - yj) * (yi - yj) + (xi - xj) * (xi - xj);
      cand.emplace_back(d2, j);
    }
    const int64_t kk = std::min<int64_t>(k, n - 1);
    // Ties broken by node index so the structure is deterministic.
    std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
    for (int64_t t = 0; t < kk; ++t) {
      const int64_t j = cand[static_cast<size_t>(t)].second;
      // Union symmetrization: a neighbor in either direction makes an edge.
      adj[static_cast<size_t>(i * n + j)] = 1.0;
      adj[static_cast<size_t>(j * n + i)] = 1.0;
    }
  }
  return adj;
}

Graph build_spatial_vessel_graph(const Tensor& mask, const Tensor& feat,
                                 int64_t max_nodes, int64_t k, uint64_t seed) {
  if (mask.ndim() != 2) throw ShapeError("spatial graph: mask must be [H,W]");
  if (feat.ndim() != 3 || feat.dim(1) != mask.dim(0) ||
      feat.dim(2) != mask.dim(1)) {
    throw ShapeError("spatial graph: features must be [C,H,W] matching mask");
  }
  const int64_t h = mask.dim(0), w = mask.dim(1), c = feat.dim(0);
  auto pos = vessel_positions(mask.data(), h, w, max_nodes, seed);
  if (pos.empty()) return Graph{};  // empty sentinel; caller must handle

  Graph g;
  g.positions = pos;
  g.node_features = gather_nodes(reshape(feat, {1, c, h, w}), 0, pos);
  const int64_t n = static_cast<int64_t>(pos.size());
  g.adjacency =
      Tensor::from_data({n, n}, normalize_adjacency(knn_adjacency(pos, w, k), n));
  g.normalized = true;
  return g;
}

}  // namespace gcu
