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

#ifndef GCU_TENSOR_HPP_
#define GCU_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gcu/rng.hpp"

namespace gcu {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
std::vector<int64_t> row_major_strides(const Shape& s);

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised when training hits a non-finite loss or gradient; carries context.
struct NumericalAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// When enabled, every op output is scanned for NaN/Inf. Off by default;
// tests switch it on.
void set_debug_check_finite(bool on);
bool debug_check_finite();

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated on first accumulation, zero-filled
  std::vector<Tensor> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with a reverse-mode gradient record.
/// Values are immutable after construction except for grad accumulation;
/// copying a Tensor copies a handle to the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor eye(int64_t n);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  const std::vector<double>& data() const { return node_->data; }
  // Direct mutation is reserved for leaves (parameter init, optimizer steps,
  // test fixtures); op outputs are never mutated. Constness is shallow:
  // a Tensor is a handle to a shared node.
  std::vector<double>& mutable_data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad() const { return node_->ensure_grad(); }
  void zero_grad() const;

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  detail::Node* node() const { return node_.get(); }

  /// Records one op on the tape. `backward_fn` pulls this node's grad into
  /// the parents' grads. requires_grad is inherited from the parents.
  static Tensor make_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn,
                        const char* op);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Grads accumulate; callers zero
/// them between steps. Parameters not reachable from `loss` are untouched
/// (their grads stay zero).
void backward(const Tensor& loss);

enum class ParamKind { Conv, Graph, Capsule };

struct Parameter {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

/// Ordered registry of named parameters. Insertion order is the checkpoint
/// and initialization order, so it must be deterministic.
class ParamRegistry {
 public:
  Tensor add(std::string name, Tensor t, ParamKind kind);
  const std::vector<Parameter>& items() const { return items_; }
  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  int64_t total_scalars() const;
  int64_t count_kind(ParamKind kind) const;
  int64_t count_kind_with_prefix(std::string_view prefix, ParamKind kind) const;
  void zero_grads();

 private:
  std::vector<Parameter> items_;
};

}  // namespace gcu

#endif  // GCU_TENSOR_HPP_
