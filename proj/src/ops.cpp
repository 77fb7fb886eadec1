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

#include "gcu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gcu/kernels.hpp"

namespace gcu {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void accumulate(const Tensor& parent, const std::vector<double>& contrib) {
  auto& g = parent.node()->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += contrib[i];
}

int64_t normalize_axis(int64_t axis, int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range");
  }
  return axis;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node& self) {
        if (a.requires_grad()) accumulate(a, self.grad);
        if (b.requires_grad()) accumulate(b, self.grad);
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node& self) {
        if (a.requires_grad()) accumulate(a, self.grad);
        if (b.requires_grad()) {
          auto& g = b.node()->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](detail::Node& self) {
        if (a.requires_grad()) {
          auto& g = a.node()->ensure_grad();
          const auto& bv2 = b.data();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv2[i];
        }
        if (b.requires_grad()) {
          auto& g = b.node()->ensure_grad();
          const auto& av2 = a.data();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av2[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [a, s](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
      },
      "scale");
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [a](detail::Node& self) {
        if (a.requires_grad()) accumulate(a, self.grad);
      },
      "add_const");
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const auto& av2 = a.data();
        for (size_t i = 0; i < g.size(); ++i) {
          if (av2[i] > 0.0) g[i] += self.grad[i];
        }
      },
      "relu");
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-av[i]))
                          : std::exp(av[i]) / (1.0 + std::exp(av[i]));
  }
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
          const double y = self.data[i];
          g[i] += self.grad[i] * y * (1.0 - y);
        }
      },
      "sigmoid");
}

Tensor pow_scalar(const Tensor& a, double p) {
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::pow(av[i], p);
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [a, p](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const auto& av2 = a.data();
        for (size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * p * std::pow(av2[i], p - 1.0);
        }
      },
      "pow_scalar");
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must hold one value");
  const double sv = s.data()[0];
  std::vector<double> out(a.data().size());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sv;
  return Tensor::make_op(
      a.shape(), std::move(out), {a, s},
      [a, s, sv](detail::Node& self) {
        if (a.requires_grad()) {
          auto& g = a.node()->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv;
        }
        if (s.requires_grad()) {
          const auto& av2 = a.data();
          double acc = 0.0;
          for (size_t i = 0; i < av2.size(); ++i) acc += self.grad[i] * av2[i];
          s.node()->ensure_grad()[0] += acc;
        }
      },
      "scale_by");
}

Tensor reshape(const Tensor& a, Shape shape) {
  // One extent may be -1 (inferred).
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: multiple -1 extents");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = a.numel() / known;
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out = a.data();
  return Tensor::make_op(
      std::move(shape), std::move(out), {a},
      [a](detail::Node& self) {
        if (a.requires_grad()) accumulate(a, self.grad);
      },
      "reshape");
}

Tensor permute(const Tensor& a, const std::vector<int64_t>& perm) {
  const Shape& in_shape = a.shape();
  const auto rank = in_shape.size();
  if (perm.size() != rank) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t p = perm[i];
    if (p < 0 || p >= static_cast<int64_t>(rank) || seen[static_cast<size_t>(p)]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<size_t>(p)] = true;
    out_shape[i] = in_shape[static_cast<size_t>(p)];
  }
  const auto in_strides = row_major_strides(in_shape);
  // Stride of output coordinate i inside the input buffer.
  std::vector<int64_t> map_strides(rank);
  for (size_t i = 0; i < rank; ++i) map_strides[i] = in_strides[static_cast<size_t>(perm[i])];
  const auto out_strides = row_major_strides(out_shape);

  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& av = a.data();
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, src = 0;
    for (size_t i = 0; i < rank; ++i) {
      const int64_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      src += c * map_strides[i];
    }
    out[static_cast<size_t>(o)] = av[static_cast<size_t>(src)];
  }
  return Tensor::make_op(
      std::move(out_shape), std::move(out), {a},
      [a, map_strides, rank](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const auto out_str = row_major_strides(self.shape);
        const int64_t total = static_cast<int64_t>(self.data.size());
        for (int64_t o = 0; o < total; ++o) {
          int64_t rem = o, src = 0;
          for (size_t i = 0; i < rank; ++i) {
            const int64_t c = rem / out_str[i];
            rem -= c * out_str[i];
            src += c * map_strides[i];
          }
          g[static_cast<size_t>(src)] += self.grad[static_cast<size_t>(o)];
        }
      },
      "permute");
}

Tensor concat(const std::vector<Tensor>& ts, int64_t axis) {
  if (ts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = ts[0].shape();
  const int64_t rank = static_cast<int64_t>(first.size());
  axis = normalize_axis(axis, rank, "concat");
  Shape out_shape = first;
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const Tensor& t : ts) {
    if (t.ndim() != rank) throw ShapeError("concat: rank mismatch");
    for (int64_t i = 0; i < rank; ++i) {
      if (i != axis && t.dim(i) != first[static_cast<size_t>(i)]) {
        throw ShapeError("concat: extent mismatch off the concat axis");
      }
    }
    out_shape[static_cast<size_t>(axis)] += t.dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= first[static_cast<size_t>(i)];
  for (int64_t i = axis + 1; i < rank; ++i) inner *= first[static_cast<size_t>(i)];

  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const int64_t out_axis = out_shape[static_cast<size_t>(axis)];
  int64_t offset = 0;
  for (const Tensor& t : ts) {
    const int64_t ax = t.dim(axis);
    const auto& tv = t.data();
    for (int64_t u = 0; u < outer; ++u) {
      std::memcpy(&out[static_cast<size_t>((u * out_axis + offset) * inner)],
                  &tv[static_cast<size_t>(u * ax * inner)],
                  sizeof(double) * static_cast<size_t>(ax * inner));
    }
    offset += ax;
  }
  std::vector<Tensor> parents = ts;
  return Tensor::make_op(
      std::move(out_shape), std::move(out), parents,
      [parents, axis, outer, inner, out_axis](detail::Node& self) {
        int64_t off = 0;
        for (const Tensor& t : parents) {
          const int64_t ax = t.dim(axis);
          if (t.requires_grad()) {
            auto& g = t.node()->ensure_grad();
            for (int64_t u = 0; u < outer; ++u) {
              const double* src =
                  &self.grad[static_cast<size_t>((u * out_axis + off) * inner)];
              double* dst = &g[static_cast<size_t>(u * ax * inner)];
              for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
            }
          }
          off += ax;
        }
      },
      "concat");
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len) {
  const int64_t rank = a.ndim();
  axis = normalize_axis(axis, rank, "slice");
  if (start < 0 || len < 1 || start + len > a.dim(axis)) {
    throw ShapeError("slice: range out of bounds");
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int64_t i = axis + 1; i < rank; ++i) inner *= a.dim(i);
  const int64_t in_axis = a.dim(axis);

  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const auto& av = a.data();
  for (int64_t u = 0; u < outer; ++u) {
    std::memcpy(&out[static_cast<size_t>(u * len * inner)],
                &av[static_cast<size_t>((u * in_axis + start) * inner)],
                sizeof(double) * static_cast<size_t>(len * inner));
  }
  return Tensor::make_op(
      std::move(out_shape), std::move(out), {a},
      [a, start, len, outer, inner, in_axis](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        for (int64_t u = 0; u < outer; ++u) {
          const double* src = &self.grad[static_cast<size_t>(u * len * inner)];
          double* dst = &g[static_cast<size_t>((u * in_axis + start) * inner)];
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      },
      "slice");
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  const Shape& src = a.shape();
  if (src.size() != shape.size()) {
    throw ShapeError("broadcast_to: rank mismatch (reshape first)");
  }
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i] != shape[i] && src[i] != 1) {
      throw ShapeError("broadcast_to: cannot expand " + shape_str(src) +
                       " to " + shape_str(shape));
    }
  }
  const auto rank = src.size();
  const auto src_strides = row_major_strides(src);
  std::vector<int64_t> eff(rank);
  for (size_t i = 0; i < rank; ++i) eff[i] = (src[i] == 1) ? 0 : src_strides[i];
  const auto out_strides = row_major_strides(shape);
  const int64_t n = shape_numel(shape);

  std::vector<double> out(static_cast<size_t>(n));
  const auto& av = a.data();
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, s = 0;
    for (size_t i = 0; i < rank; ++i) {
      const int64_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      s += c * eff[i];
    }
    out[static_cast<size_t>(o)] = av[static_cast<size_t>(s)];
  }
  return Tensor::make_op(
      Shape(shape), std::move(out), {a},
      [a, eff, out_strides, rank](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const int64_t total = static_cast<int64_t>(self.data.size());
        for (int64_t o = 0; o < total; ++o) {
          int64_t rem = o, s = 0;
          for (size_t i = 0; i < rank; ++i) {
            const int64_t c = rem / out_strides[i];
            rem -= c * out_strides[i];
            s += c * eff[i];
          }
          g[static_cast<size_t>(s)] += self.grad[static_cast<size_t>(o)];
        }
      },
      "broadcast_to");
}

Tensor sum_all(const Tensor& a) {
  const double s = kernels::sum(a.data().data(), a.numel());
  return Tensor::make_op(
      {1}, {s}, {a},
      [a](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const double gv = self.grad[0];
        for (double& x : g) x += gv;
      },
      "sum_all");
}

Tensor sum_axes(const Tensor& a, const std::vector<int64_t>& axes,
                bool keepdim) {
  const int64_t rank = a.ndim();
  std::vector<bool> reduced(static_cast<size_t>(rank), false);
  for (int64_t ax : axes) {
    reduced[static_cast<size_t>(normalize_axis(ax, rank, "sum_axes"))] = true;
  }
  Shape out_shape;
  Shape kept_shape(a.shape());
  for (int64_t i = 0; i < rank; ++i) {
    if (reduced[static_cast<size_t>(i)]) {
      kept_shape[static_cast<size_t>(i)] = 1;
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(a.dim(i));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Map input flat index -> reduced ("kept") flat index.
  const auto in_strides = row_major_strides(a.shape());
  const auto kept_strides = row_major_strides(kept_shape);
  std::vector<int64_t> eff(static_cast<size_t>(rank));
  for (int64_t i = 0; i < rank; ++i) {
    eff[static_cast<size_t>(i)] =
        reduced[static_cast<size_t>(i)] ? 0 : kept_strides[static_cast<size_t>(i)];
  }
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(shape_numel(kept_shape)), 0.0);
  const auto& av = a.data();
  for (int64_t idx = 0; idx < n; ++idx) {
    int64_t rem = idx, dst = 0;
    for (int64_t i = 0; i < rank; ++i) {
      const int64_t c = rem / in_strides[static_cast<size_t>(i)];
      rem -= c * in_strides[static_cast<size_t>(i)];
      dst += c * eff[static_cast<size_t>(i)];
    }
    out[static_cast<size_t>(dst)] += av[static_cast<size_t>(idx)];
  }
  return Tensor::make_op(
      std::move(out_shape), std::move(out), {a},
      [a, in_strides, eff, rank](detail::Node& self) {
        if (!a.requires_grad()) return;
        auto& g = a.node()->ensure_grad();
        const int64_t total = static_cast<int64_t>(g.size());
        for (int64_t idx = 0; idx < total; ++idx) {
          int64_t rem = idx, dst = 0;
          for (int64_t i = 0; i < rank; ++i) {
            const int64_t c = rem / in_strides[static_cast<size_t>(i)];
            rem -= c * in_strides[static_cast<size_t>(i)];
            dst += c * eff[static_cast<size_t>(i)];
          }
          g[static_cast<size_t>(idx)] += self.grad[static_cast<size_t>(dst)];
        }
      },
      "sum_axes");
}

Tensor mean_axes(const Tensor& a, const std::vector<int64_t>& axes,
                 bool keepdim) {
  int64_t count = 1;
  const int64_t rank = a.ndim();
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (int64_t ax : axes) {
    const int64_t n = normalize_axis(ax, rank, "mean_axes");
    if (!seen[static_cast<size_t>(n)]) count *= a.dim(n);
    seen[static_cast<size_t>(n)] = true;
  }
  return scale(sum_axes(a, axes, keepdim), 1.0 / static_cast<double>(count));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  return Tensor::make_op(
      {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](detail::Node& self) {
        if (a.requires_grad()) {
          std::vector<double> bt(static_cast<size_t>(k * n));
          kernels::transpose(b.data().data(), bt.data(), k, n);
          std::vector<double> ga(static_cast<size_t>(m * k));
          kernels::matmul(self.grad.data(), bt.data(), ga.data(), m, n, k);
          accumulate(a, ga);
        }
        if (b.requires_grad()) {
          std::vector<double> at(static_cast<size_t>(m * k));
          kernels::transpose(a.data().data(), at.data(), m, k);
          std::vector<double> gb(static_cast<size_t>(k * n));
          kernels::matmul(at.data(), self.grad.data(), gb.data(), k, m, n);
          accumulate(b, gb);
        }
      },
      "matmul");
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int64_t stride, int64_t padding) {
  if (input.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("conv2d: input and kernel must be rank 4");
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: kernel must be square");
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: channel mismatch, input " +
                     shape_str(input.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (stride < 1 || padding < 0 || kernel.dim(2) < 1) {
    throw ConfigError("conv2d: invalid stride/padding/kernel size");
  }
  kernels::Conv2dDims d;
  d.batch = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = kernel.dim(0);
  d.k = kernel.dim(2);
  d.stride = stride;
  d.pad = padding;
  const int64_t hnum = d.h + 2 * padding - d.k;
  const int64_t wnum = d.w + 2 * padding - d.k;
  if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0) {
    throw ConfigError("conv2d: output extent is not a positive integer for " +
                      shape_str(input.shape()) + " with k=" +
                      std::to_string(d.k) + " stride=" + std::to_string(stride) +
                      " pad=" + std::to_string(padding));
  }
  d.ho = hnum / stride + 1;
  d.wo = wnum / stride + 1;
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.cout)) {
    throw ShapeError("conv2d: bias must be [Cout]");
  }

  std::vector<double> out(static_cast<size_t>(d.batch * d.cout * d.ho * d.wo));
  kernels::conv2d_forward(input.data().data(), kernel.data().data(),
                          bias.defined() ? bias.data().data() : nullptr,
                          out.data(), d);
  std::vector<Tensor> parents = {input, kernel};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_op(
      {d.batch, d.cout, d.ho, d.wo}, std::move(out), std::move(parents),
      [input, kernel, bias, d](detail::Node& self) {
        if (input.requires_grad()) {
          std::vector<double> gin(input.data().size());
          kernels::conv2d_backward_input(self.grad.data(),
                                         kernel.data().data(), gin.data(), d);
          accumulate(input, gin);
        }
        if (kernel.requires_grad()) {
          std::vector<double> gw(kernel.data().size());
          kernels::conv2d_backward_weight(self.grad.data(),
                                          input.data().data(), gw.data(), d);
          accumulate(kernel, gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          std::vector<double> gb(bias.data().size());
          kernels::conv2d_backward_bias(self.grad.data(), gb.data(), d);
          accumulate(bias, gb);
        }
      },
      "conv2d");
}

Tensor max_pool2x2(const Tensor& input) {
  if (input.ndim() != 4) throw ShapeError("max_pool2x2: rank-4 input required");
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool2x2: spatial extents must be even, got " +
                     shape_str(input.shape()));
  }
  const int64_t n_out = b * c * (h / 2) * (w / 2);
  std::vector<double> out(static_cast<size_t>(n_out));
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(n_out));
  kernels::maxpool2x2_forward(input.data().data(), out.data(), argmax->data(),
                              b, c, h, w);
  return Tensor::make_op(
      {b, c, h / 2, w / 2}, std::move(out), {input},
      [input, argmax, n_out](detail::Node& self) {
        if (!input.requires_grad()) return;
        auto& g = input.node()->ensure_grad();
        kernels::maxpool2x2_backward(self.grad.data(), argmax->data(),
                                     g.data(), n_out);
      },
      "max_pool2x2");
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.ndim() != 4) {
    throw ShapeError("global_avg_pool: rank-4 input required");
  }
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  const int64_t hw = h * w;
  std::vector<double> out(static_cast<size_t>(b * c));
  const auto& iv = input.data();
  for (int64_t p = 0; p < b * c; ++p) {
    out[static_cast<size_t>(p)] =
        kernels::sum(&iv[static_cast<size_t>(p * hw)], hw) /
        static_cast<double>(hw);
  }
  return Tensor::make_op(
      {b, c, 1, 1}, std::move(out), {input},
      [input, hw](detail::Node& self) {
        if (!input.requires_grad()) return;
        auto& g = input.node()->ensure_grad();
        const double inv = 1.0 / static_cast<double>(hw);
        for (size_t p = 0; p < self.grad.size(); ++p) {
          const double gv = self.grad[p] * inv;
          double* dst = &g[p * static_cast<size_t>(hw)];
          for (int64_t i = 0; i < hw; ++i) dst[i] += gv;
        }
      },
      "global_avg_pool");
}

Tensor softmax(const Tensor& input, int64_t axis) {
  const int64_t rank = input.ndim();
  axis = normalize_axis(axis, rank, "softmax");
  const int64_t n = input.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= input.dim(i);
  for (int64_t i = axis + 1; i < rank; ++i) inner *= input.dim(i);

  std::vector<double> out(input.data().size());
  const auto& iv = input.data();
  for (int64_t u = 0; u < outer; ++u) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = u * n * inner + in;
      double mx = iv[static_cast<size_t>(base)];
      for (int64_t i = 1; i < n; ++i) {
        mx = std::max(mx, iv[static_cast<size_t>(base + i * inner)]);
      }
      double denom = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double e = std::exp(iv[static_cast<size_t>(base + i * inner)] - mx);
        out[static_cast<size_t>(base + i * inner)] = e;
        denom += e;
      }
      for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(base + i * inner)] /= denom;
      }
    }
  }
  return Tensor::make_op(
      input.shape(), std::move(out), {input},
      [input, outer, inner, n](detail::Node& self) {
        if (!input.requires_grad()) return;
        auto& g = input.node()->ensure_grad();
        for (int64_t u = 0; u < outer; ++u) {
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = u * n * inner + in;
            double dot = 0.0;
            for (int64_t i = 0; i < n; ++i) {
              const size_t idx = static_cast<size_t>(base + i * inner);
              dot += self.grad[idx] * self.data[idx];
            }
            for (int64_t i = 0; i < n; ++i) {
              const size_t idx = static_cast<size_t>(base + i * inner);
              g[idx] += self.data[idx] * (self.grad[idx] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor upsample_nearest(const Tensor& input, int64_t factor) {
  if (input.ndim() != 4) {
    throw ShapeError("upsample_nearest: rank-4 input required");
  }
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  const int64_t ho = h * factor, wo = w * factor;
  std::vector<double> out(static_cast<size_t>(b * c * ho * wo));
  const auto& iv = input.data();
  for (int64_t p = 0; p < b * c; ++p) {
    const double* ip = &iv[static_cast<size_t>(p * h * w)];
    double* op = &out[static_cast<size_t>(p * ho * wo)];
    for (int64_t y = 0; y < ho; ++y) {
      const double* row = &ip[(y / factor) * w];
      for (int64_t x = 0; x < wo; ++x) op[y * wo + x] = row[x / factor];
    }
  }
  return Tensor::make_op(
      {b, c, ho, wo}, std::move(out), {input},
      [input, factor, h, w, ho, wo](detail::Node& self) {
        if (!input.requires_grad()) return;
        auto& g = input.node()->ensure_grad();
        const int64_t planes = static_cast<int64_t>(g.size()) / (h * w);
        for (int64_t p = 0; p < planes; ++p) {
          double* gp = &g[static_cast<size_t>(p * h * w)];
          const double* sp = &self.grad[static_cast<size_t>(p * ho * wo)];
          for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
              double acc = 0.0;
              for (int64_t dy = 0; dy < factor; ++dy) {
                const double* row = &sp[(y * factor + dy) * wo + x * factor];
                for (int64_t dx = 0; dx < factor; ++dx) acc += row[dx];
              }
              gp[y * w + x] += acc;
            }
          }
        }
      },
      "upsample_nearest");
}

Tensor unfold(const Tensor& input, int64_t k) {
  if (input.ndim() != 4) throw ShapeError("unfold: rank-4 input required");
  if (k < 1 || k % 2 == 0) {
    throw ConfigError("unfold: window extent must be odd and positive");
  }
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2),
                w = input.dim(3);
  const int64_t kk = k * k, pad = k / 2;
  std::vector<double> out(static_cast<size_t>(b * kk * c * h * w), 0.0);
  const auto& iv = input.data();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t t = 0; t < kk; ++t) {
      const int64_t dy = t / k - pad, dx = t % k - pad;
      for (int64_t ci = 0; ci < c; ++ci) {
        const double* ip = &iv[static_cast<size_t>(((bi * c) + ci) * h * w)];
        double* op = &out[static_cast<size_t>((((bi * kk) + t) * c + ci) * h * w)];
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int64_t x = 0; x < w; ++x) {
            const int64_t sx = x + dx;
            if (sx < 0 || sx >= w) continue;
            op[y * w + x] = ip[sy * w + sx];
          }
        }
      }
    }
  }
  return Tensor::make_op(
      {b, kk, c, h, w}, std::move(out), {input},
      [input, b, c, h, w, k, kk, pad](detail::Node& self) {
        if (!input.requires_grad()) return;
        auto& g = input.node()->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi) {
          for (int64_t ci = 0; ci < c; ++ci) {
            double* gp = &g[static_cast<size_t>(((bi * c) + ci) * h * w)];
            for (int64_t t = 0; t < kk; ++t) {
              const int64_t dy = t / k - pad, dx = t % k - pad;
              const double* sp =
                  &self.grad[static_cast<size_t>((((bi * kk) + t) * c + ci) * h * w)];
              for (int64_t y = 0; y < h; ++y) {
                const int64_t sy = y + dy;
                if (sy < 0 || sy >= h) continue;
                for (int64_t x = 0; x < w; ++x) {
                  const int64_t sx = x + dx;
                  if (sx < 0 || sx >= w) continue;
                  gp[sy * w + sx] += sp[y * w + x];
                }
              }
            }
          }
        }
      },
      "unfold");
}

Tensor squash(const Tensor& s) {
  const int64_t v = s.dim(s.ndim() - 1);
  const int64_t groups = s.numel() / v;
  std::vector<double> out(s.data().size());
  const auto& sv = s.data();
  for (int64_t gidx = 0; gidx < groups; ++gidx) {
    const double* sp = &sv[static_cast<size_t>(gidx * v)];
    double n2 = 0.0;
    for (int64_t i = 0; i < v; ++i) n2 += sp[i] * sp[i];
    const double n = std::sqrt(n2);
    const double alpha = n > 0.0 ? n / (1.0 + n2) : 0.0;
    double* op = &out[static_cast<size_t>(gidx * v)];
    for (int64_t i = 0; i < v; ++i) op[i] = alpha * sp[i];
  }
  return Tensor::make_op(
      s.shape(), std::move(out), {s},
      [s, v, groups](detail::Node& self) {
        if (!s.requires_grad()) return;
        auto& g = s.node()->ensure_grad();
        const auto& sv2 = s.data();
        for (int64_t gidx = 0; gidx < groups; ++gidx) {
          const double* sp = &sv2[static_cast<size_t>(gidx * v)];
          const double* gp = &self.grad[static_cast<size_t>(gidx * v)];
          double* dst = &g[static_cast<size_t>(gidx * v)];
          double n2 = 0.0, dot = 0.0;
          for (int64_t i = 0; i < v; ++i) {
            n2 += sp[i] * sp[i];
            dot += gp[i] * sp[i];
          }
          const double n = std::sqrt(n2);
          if (n == 0.0) continue;  // derivative vanishes at the origin
          const double alpha = n / (1.0 + n2);
          const double dalpha = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
          const double coef = dot * dalpha / n;
          for (int64_t i = 0; i < v; ++i) {
            dst[i] += gp[i] * alpha + sp[i] * coef;
          }
        }
      },
      "squash");
}

Tensor stop_gradient(const Tensor& a) {
  std::vector<double> out = a.data();
  return Tensor::make_op(a.shape(), std::move(out), {}, nullptr,
                         "stop_gradient");
}

Tensor gather_nodes(const Tensor& x, int64_t batch_index,
                    const std::vector<int64_t>& positions) {
  if (x.ndim() != 4) throw ShapeError("gather_nodes: rank-4 input required");
  const int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const int64_t n = static_cast<int64_t>(positions.size());
  if (n < 1) throw ContractError("gather_nodes: empty position list");
  for (int64_t p : positions) {
    if (p < 0 || p >= hw) throw ContractError("gather_nodes: position range");
  }
  std::vector<double> out(static_cast<size_t>(n * c));
  const auto& xv = x.data();
  const int64_t base = batch_index * c * hw;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      out[static_cast<size_t>(i * c + ci)] =
          xv[static_cast<size_t>(base + ci * hw + positions[static_cast<size_t>(i)])];
    }
  }
  return Tensor::make_op(
      {n, c}, std::move(out), {x},
      [x, batch_index, positions, c, hw, n](detail::Node& self) {
        if (!x.requires_grad()) return;
        auto& g = x.node()->ensure_grad();
        const int64_t base = batch_index * c * hw;
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t ci = 0; ci < c; ++ci) {
            g[static_cast<size_t>(base + ci * hw +
                                  positions[static_cast<size_t>(i)])] +=
                self.grad[static_cast<size_t>(i * c + ci)];
          }
        }
      },
      "gather_nodes");
}

Tensor scatter_nodes(const Tensor& base, int64_t batch_index,
                     const std::vector<int64_t>& positions,
                     const Tensor& nodes) {
  if (base.ndim() != 4 || nodes.ndim() != 2) {
    throw ShapeError("scatter_nodes: base rank 4, nodes rank 2 required");
  }
  const int64_t c = base.dim(1), hw = base.dim(2) * base.dim(3);
  const int64_t n = static_cast<int64_t>(positions.size());
  if (nodes.dim(0) != n || nodes.dim(1) != c) {
    throw ShapeError("scatter_nodes: nodes shape mismatch");
  }
  std::vector<double> out = base.data();
  const auto& nv = nodes.data();
  const int64_t off = batch_index * c * hw;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      out[static_cast<size_t>(off + ci * hw + positions[static_cast<size_t>(i)])] =
          nv[static_cast<size_t>(i * c + ci)];
    }
  }
  return Tensor::make_op(
      base.shape(), std::move(out), {base, nodes},
      [base, nodes, batch_index, positions, c, hw, n](detail::Node& self) {
        const int64_t off = batch_index * c * hw;
        if (base.requires_grad()) {
          auto& g = base.node()->ensure_grad();
          // Everything except the overwritten cells.
          std::vector<char> written(static_cast<size_t>(hw), 0);
          for (int64_t p : positions) written[static_cast<size_t>(p)] = 1;
          const int64_t total = static_cast<int64_t>(g.size());
          for (int64_t i = 0; i < total; ++i) {
            if (i >= off && i < off + c * hw &&
                written[static_cast<size_t>((i - off) % hw)]) {
              continue;
            }
            g[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
          }
        }
        if (nodes.requires_grad()) {
          auto& g = nodes.node()->ensure_grad();
          for (int64_t i = 0; i < n; ++i) {
            for (int64_t ci = 0; ci < c; ++ci) {
              g[static_cast<size_t>(i * c + ci)] +=
                  self.grad[static_cast<size_t>(
                      off + ci * hw + positions[static_cast<size_t>(i)])];
            }
          }
        }
      },
      "scatter_nodes");
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target,
                     const Tensor& fov) {
  if (logits.ndim() != 4 || logits.dim(1) != 2) {
    throw ShapeError("cross_entropy: logits must be [B,2,H,W]");
  }
  const int64_t b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  const Shape expect = {b, h, w};
  if (target.shape() != expect || fov.shape() != expect) {
    throw ShapeError("cross_entropy: target/fov must be [B,H,W]");
  }
  for (double t : target.data()) {
    if (t != 0.0 && t != 1.0) {
      throw ContractError("cross_entropy: target must be binary");
    }
  }
  int64_t nfov = 0;
  for (double f : fov.data()) {
    if (f != 0.0 && f != 1.0) {
      throw ContractError("cross_entropy: fov must be binary");
    }
    nfov += f == 1.0 ? 1 : 0;
  }
  if (nfov == 0) {
    throw ContractError("cross_entropy: empty field of view");
  }

  const auto& lv = logits.data();
  const auto& tv = target.data();
  const auto& fv = fov.data();
  const int64_t hw = h * w;
  constexpr double kLogClamp = -27.631021115928547;  // log(1e-12)
  double loss = 0.0;
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* l0 = &lv[static_cast<size_t>((bi * 2 + 0) * hw)];
    const double* l1 = &lv[static_cast<size_t>((bi * 2 + 1) * hw)];
    for (int64_t i = 0; i < hw; ++i) {
      if (fv[static_cast<size_t>(bi * hw + i)] == 0.0) continue;
      const double m = std::max(l0[i], l1[i]);
      const double lse = m + std::log(std::exp(l0[i] - m) + std::exp(l1[i] - m));
      const double lt = tv[static_cast<size_t>(bi * hw + i)] == 1.0 ? l1[i] : l0[i];
      const double logq = std::max(lt - lse, kLogClamp);
      loss -= logq;
    }
  }
  loss /= static_cast<double>(nfov);

  return Tensor::make_op(
      {1}, {loss}, {logits, target, fov},
      [logits, target, fov, b, hw, nfov](detail::Node& self) {
        if (!logits.requires_grad()) return;
        auto& g = logits.node()->ensure_grad();
        const auto& lv2 = logits.data();
        const auto& tv2 = target.data();
        const auto& fv2 = fov.data();
        const double scale_g = self.grad[0] / static_cast<double>(nfov);
        for (int64_t bi = 0; bi < b; ++bi) {
          const size_t o0 = static_cast<size_t>((bi * 2 + 0) * hw);
          const size_t o1 = static_cast<size_t>((bi * 2 + 1) * hw);
          for (int64_t i = 0; i < hw; ++i) {
            if (fv2[static_cast<size_t>(bi * hw + i)] == 0.0) continue;
            const double a = lv2[o0 + static_cast<size_t>(i)];
            const double c = lv2[o1 + static_cast<size_t>(i)];
            const double m = std::max(a, c);
            const double e0 = std::exp(a - m), e1 = std::exp(c - m);
            const double q1 = e1 / (e0 + e1);
            const double t = tv2[static_cast<size_t>(bi * hw + i)];
            g[o0 + static_cast<size_t>(i)] += scale_g * ((1.0 - q1) - (1.0 - t));
            g[o1 + static_cast<size_t>(i)] += scale_g * (q1 - t);
          }
        }
      },
      "cross_entropy");
}

}  // namespace gcu
