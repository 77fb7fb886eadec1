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

#ifndef GCU_GRAPH_HPP_
#define GCU_GRAPH_HPP_

#include <span>
#include <utility>
#include <vector>

#include "gcu/ops.hpp"
#include "gcu/tensor.hpp"

namespace gcu {

/// Node-feature matrix plus adjacency. Channel graphs leave `adjacency`
/// undefined (the layer's learnable logits supply it); spatial graphs carry
/// a structural normalized adjacency and the pixel position of every node.
struct Graph {
  Tensor node_features;  // [N, F]
  Tensor adjacency;      // [N, N], defined only for structural graphs
  bool normalized = false;
  std::vector<int64_t> positions;  // row*W+col per node (spatial graphs)

  bool empty() const { return !node_features.defined(); }
  int64_t num_nodes() const { return empty() ? 0 : node_features.dim(0); }
};

/// Symmetric renormalization A_hat = D^-1/2 (A + I) D^-1/2 with D the degree
/// matrix of A + I. Entries of `a` must be nonnegative.
std::vector<double> normalize_adjacency(const std::vector<double>& a,
                                        int64_t n);
/// Tape version of the same formula; differentiable w.r.t. `a`.
Tensor normalize_adjacency_t(const Tensor& a);

enum class Activation { Linear, Relu, Sigmoid };

Tensor apply_activation(const Tensor& t, Activation act);

/// Single-hop propagation out = act(A_hat X W). Exactly one adjacency
/// source: learnable logits (softmax -> symmetrize -> normalize, channel
/// graphs) or the graph's structural adjacency (spatial graphs).
struct GraphConvLayer {
  Tensor weight;            // [F_in, F_out]
  Tensor adjacency_logits;  // [N, N] or undefined
  Activation act = Activation::Sigmoid;

  bool learnable_adjacency() const { return adjacency_logits.defined(); }
  /// Propagation matrix from the learnable logits (tape ops).
  Tensor propagation() const;
};

enum class GraphWeightInit { Glorot, NearIdentity };

GraphConvLayer make_graph_conv(ParamRegistry& reg, const std::string& prefix,
                               int64_t f_in, int64_t f_out, int64_t n_nodes,
                               Activation act, Rng& rng,
                               GraphWeightInit init = GraphWeightInit::Glorot);

Graph graph_conv(const GraphConvLayer& layer, const Graph& g);
std::vector<Graph> graph_conv(const GraphConvLayer& layer,
                              std::span<const Graph> graphs);

/// One graph per batch element; node features are the pooled per-channel
/// scalars, so N = C and F = 1. Input must be spatially pooled ([B,C,1,1]).
std::vector<Graph> build_channel_graph(const Tensor& feat);

/// Per-channel gate values for a batch of pooled features: runs the layer
/// over each batch element's channel graph and stacks the outputs to [B, C].
Tensor channel_gates(const GraphConvLayer& layer, const Tensor& pooled);

/// Vessel-pixel graph: nodes are mask==1 pixels subsampled to <= max_nodes,
/// features are the per-pixel C-vectors, adjacency is union-symmetrized
/// k-nearest-neighbor over pixel coordinates, normalized. Returns the empty
/// sentinel when the mask has no vessel pixels.
Graph build_spatial_vessel_graph(const Tensor& mask, const Tensor& feat,
                                 int64_t max_nodes, int64_t k, uint64_t seed);

// Structural helpers (plain data, no tape). Exposed for reuse and testing.
std::vector<int64_t> vessel_positions(const std::vector<double>& mask,
                                      int64_t h, int64_t w, int64_t max_nodes,
                                      uint64_t seed);
std::vector<double> knn_adjacency(const std::vector<int64_t>& positions,
                                  int64_t w, int64_t k);

}  // namespace gcu

#endif  // GCU_GRAPH_HPP_
