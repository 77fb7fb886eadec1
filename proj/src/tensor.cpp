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

#include "gcu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace gcu {

namespace {
bool g_debug_check_finite = false;

void check_all_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw ContractError(std::string("non-finite value in ") + what);
    }
  }
}
}  // namespace

void set_debug_check_finite(bool on) { g_debug_check_finite = on; }
bool debug_check_finite() { return g_debug_check_finite; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

static void validate_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_str(shape));
    }
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  auto n = std::make_shared<detail::Node>();
  n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  if (!std::isfinite(value)) throw ContractError("non-finite fill value");
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("data size " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  check_all_finite(values, "tensor construction");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::eye(int64_t n) {
  Tensor t = zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.node_->data[static_cast<size_t>(i * n + i)] = 1.0;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi,
                       bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.node_->data) x = rng.uniform(lo, hi);
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw ContractError("tensor has no gradient buffer");
  }
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a scalar, got shape " +
                        shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& sh = shape();
  if (idx.size() != sh.size()) throw ShapeError("at(): rank mismatch");
  auto strides = row_major_strides(sh);
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t v : idx) flat += v * strides[i++];
  return node_->data[static_cast<size_t>(flat)];
}

Tensor Tensor::make_op(Shape shape, std::vector<double> data,
                       std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward_fn,
                       const char* op) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError(std::string("op ") + op + ": output data/shape mismatch");
  }
  if (g_debug_check_finite) check_all_finite(data, op);
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool req = false;
  for (const Tensor& p : parents) req = req || p.requires_grad();
  n->requires_grad = req;
  if (req) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss tensor");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order topological sort over grad-requiring nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node(), 0});
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].node();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Tensor ParamRegistry::add(std::string name, Tensor t, ParamKind kind) {
  if (find(name) != nullptr) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  t.mutable_grad();  // parameters always carry a zeroed grad buffer
  items_.push_back(Parameter{std::move(name), t, kind});
  return t;
}

const Parameter* ParamRegistry::find(std::string_view name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* ParamRegistry::find(std::string_view name) {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

int64_t ParamRegistry::total_scalars() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

int64_t ParamRegistry::count_kind(ParamKind kind) const {
  int64_t n = 0;
  for (const auto& p : items_) n += (p.kind == kind) ? 1 : 0;
  return n;
}

int64_t ParamRegistry::count_kind_with_prefix(std::string_view prefix,
                                              ParamKind kind) const {
  int64_t n = 0;
  for (const auto& p : items_) {
    if (p.kind == kind && std::string_view(p.name).substr(0, prefix.size()) == prefix) {
      ++n;
    }
  }
  return n;
}

void ParamRegistry::zero_grads() {
  for (auto& p : items_) p.tensor.zero_grad();
}

}  // namespace gcu
