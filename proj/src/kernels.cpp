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

#include "gcu/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace gcu::kernels {

namespace {

// One output pixel of the cross-correlation. Shared by the serial and
// parallel drivers so both produce identical reduction order.
inline double conv_cell(const double* in, const double* w, int64_t b,
                        int64_t o, int64_t oy, int64_t ox,
                        const Conv2dDims& d) {
  double acc = 0.0;
  const int64_t y0 = oy * d.stride - d.pad;
  const int64_t x0 = ox * d.stride - d.pad;
  for (int64_t c = 0; c < d.cin; ++c) {
    const double* inp = in + ((b * d.cin + c) * d.h) * d.w;
    const double* wp = w + ((o * d.cin + c) * d.k) * d.k;
    for (int64_t ky = 0; ky < d.k; ++ky) {
      const int64_t y = y0 + ky;
      if (y < 0 || y >= d.h) continue;
      for (int64_t kx = 0; kx < d.k; ++kx) {
        const int64_t x = x0 + kx;
        if (x < 0 || x >= d.w) continue;
        acc += inp[y * d.w + x] * wp[ky * d.k + kx];
      }
    }
  }
  return acc;
}

// Gradient w.r.t. one input plane (b, c); owns all writes to that plane.
inline void conv_grad_input_plane(const double* gout, const double* w,
                                  double* gin_plane, int64_t b, int64_t c,
                                  const Conv2dDims& d) {
  std::memset(gin_plane, 0, sizeof(double) * static_cast<size_t>(d.h * d.w));
  for (int64_t o = 0; o < d.cout; ++o) {
    const double* gp = gout + ((b * d.cout + o) * d.ho) * d.wo;
    const double* wp = w + ((o * d.cin + c) * d.k) * d.k;
    for (int64_t oy = 0; oy < d.ho; ++oy) {
      const int64_t y0 = oy * d.stride - d.pad;
      for (int64_t ox = 0; ox < d.wo; ++ox) {
        const int64_t x0 = ox * d.stride - d.pad;
        const double g = gp[oy * d.wo + ox];
        for (int64_t ky = 0; ky < d.k; ++ky) {
          const int64_t y = y0 + ky;
          if (y < 0 || y >= d.h) continue;
          for (int64_t kx = 0; kx < d.k; ++kx) {
            const int64_t x = x0 + kx;
            if (x < 0 || x >= d.w) continue;
            gin_plane[y * d.w + x] += g * wp[ky * d.k + kx];
          }
        }
      }
    }
  }
}

// Gradient w.r.t. one kernel slice (o, c).
inline void conv_grad_weight_slice(const double* gout, const double* in,
                                   double* gw_slice, int64_t o, int64_t c,
                                   const Conv2dDims& d) {
  for (int64_t ky = 0; ky < d.k; ++ky) {
    for (int64_t kx = 0; kx < d.k; ++kx) {
      double acc = 0.0;
      for (int64_t b = 0; b < d.batch; ++b) {
        const double* gp = gout + ((b * d.cout + o) * d.ho) * d.wo;
        const double* inp = in + ((b * d.cin + c) * d.h) * d.w;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t y = oy * d.stride - d.pad + ky;
          if (y < 0 || y >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t x = ox * d.stride - d.pad + kx;
            if (x < 0 || x >= d.w) continue;
            acc += gp[oy * d.wo + ox] * inp[y * d.w + x];
          }
        }
      }
      gw_slice[ky * d.k + kx] = acc;
    }
  }
}

inline void matmul_row(const double* a, const double* b, double* c, int64_t i,
                       int64_t k, int64_t n) {
  double* cr = c + i * n;
  std::memset(cr, 0, sizeof(double) * static_cast<size_t>(n));
  const double* ar = a + i * k;
  for (int64_t kk = 0; kk < k; ++kk) {
    const double av = ar[kk];
    const double* br = b + kk * n;
    for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

inline void maxpool_cell(const double* in, double* out, int64_t* argmax,
                         int64_t plane, int64_t oy, int64_t ox, int64_t h,
                         int64_t w) {
  const int64_t ho = h / 2, wo = w / 2;
  const double* ip = in + plane * h * w;
  int64_t best = (2 * oy) * w + (2 * ox);
  double bv = ip[best];
  for (int64_t dy = 0; dy < 2; ++dy) {
    for (int64_t dx = 0; dx < 2; ++dx) {
      const int64_t idx = (2 * oy + dy) * w + (2 * ox + dx);
      if (ip[idx] > bv) {  // strict: ties keep the first (deterministic)
        bv = ip[idx];
        best = idx;
      }
    }
  }
  out[plane * ho * wo + oy * wo + ox] = bv;
  argmax[plane * ho * wo + oy * wo + ox] = plane * h * w + best;
}

constexpr int64_t kSumBlock = 4096;

inline double sum_block(const double* x, int64_t lo, int64_t hi) {
  double acc = 0.0;
  for (int64_t i = lo; i < hi; ++i) acc += x[i];
  return acc;
}

}  // namespace

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.batch * d.cout > 1 && d.ho * d.wo * d.cin * d.k * d.k > 2048)
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t o = 0; o < d.cout; ++o) {
      double* op = out + ((b * d.cout + o) * d.ho) * d.wo;
      const double bv = bias ? bias[o] : 0.0;
      for (int64_t oy = 0; oy < d.ho; ++oy) {
        for (int64_t ox = 0; ox < d.wo; ++ox) {
          op[oy * d.wo + ox] = bv + conv_cell(in, w, b, o, oy, ox, d);
        }
      }
    }
  }
}

void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.batch * d.cin > 1)
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t c = 0; c < d.cin; ++c) {
      conv_grad_input_plane(gout, w, gin + ((b * d.cin + c) * d.h) * d.w, b, c,
                            d);
    }
  }
}

void conv2d_backward_weight(const double* gout, const double* in, double* gw,
                            const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.cout * d.cin > 1)
  for (int64_t o = 0; o < d.cout; ++o) {
    for (int64_t c = 0; c < d.cin; ++c) {
      conv_grad_weight_slice(gout, in, gw + ((o * d.cin + c) * d.k) * d.k, o,
                             c, d);
    }
  }
}

void conv2d_backward_bias(const double* gout, double* gb,
                          const Conv2dDims& d) {
#pragma omp parallel for schedule(static) if (d.cout > 1)
  for (int64_t o = 0; o < d.cout; ++o) {
    double acc = 0.0;
    for (int64_t b = 0; b < d.batch; ++b) {
      const double* gp = gout + ((b * d.cout + o) * d.ho) * d.wo;
      for (int64_t i = 0; i < d.ho * d.wo; ++i) acc += gp[i];
    }
    gb[o] = acc;
  }
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n > 16384)
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void transpose(const double* in, double* out, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
}

void maxpool2x2_forward(const double* in, double* out, int64_t* argmax,
                        int64_t b, int64_t c, int64_t h, int64_t w) {
  const int64_t planes = b * c, ho = h / 2, wo = w / 2;
#pragma omp parallel for schedule(static) if (planes > 1 && ho * wo > 1024)
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        maxpool_cell(in, out, argmax, p, oy, ox, h, w);
      }
    }
  }
}

void maxpool2x2_backward(const double* gout, const int64_t* argmax,
                         double* gin, int64_t n_out) {
  // 2x2/stride-2 windows are disjoint, so writes never collide.
#pragma omp parallel for schedule(static) if (n_out > 4096)
  for (int64_t i = 0; i < n_out; ++i) gin[argmax[i]] += gout[i];
}

double sum(const double* x, int64_t n) {
  const int64_t blocks = (n + kSumBlock - 1) / kSumBlock;
  if (blocks <= 1) return sum_block(x, 0, n);
  std::vector<double> partial(static_cast<size_t>(blocks));
#pragma omp parallel for schedule(static) if (blocks > 2)
  for (int64_t bi = 0; bi < blocks; ++bi) {
    partial[static_cast<size_t>(bi)] =
        sum_block(x, bi * kSumBlock, std::min(n, (bi + 1) * kSumBlock));
  }
  double acc = 0.0;
  for (double p : partial) acc += p;
  return acc;
}

namespace serial {

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d) {
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t o = 0; o < d.cout; ++o) {
      double* op = out + ((b * d.cout + o) * d.ho) * d.wo;
      const double bv = bias ? bias[o] : 0.0;
      for (int64_t oy = 0; oy < d.ho; ++oy) {
        for (int64_t ox = 0; ox < d.wo; ++ox) {
          op[oy * d.wo + ox] = bv + conv_cell(in, w, b, o, oy, ox, d);
        }
      }
    }
  }
}

void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const Conv2dDims& d) {
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t c = 0; c < d.cin; ++c) {
      conv_grad_input_plane(gout, w, gin + ((b * d.cin + c) * d.h) * d.w, b, c,
                            d);
    }
  }
}

void conv2d_backward_weight(const double* gout, const double* in, double* gw,
                            const Conv2dDims& d) {
  for (int64_t o = 0; o < d.cout; ++o) {
    for (int64_t c = 0; c < d.cin; ++c) {
      conv_grad_weight_slice(gout, in, gw + ((o * d.cin + c) * d.k) * d.k, o,
                             c, d);
    }
  }
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n) {
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void maxpool2x2_forward(const double* in, double* out, int64_t* argmax,
                        int64_t b, int64_t c, int64_t h, int64_t w) {
  const int64_t planes = b * c, ho = h / 2, wo = w / 2;
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        maxpool_cell(in, out, argmax, p, oy, ox, h, w);
      }
    }
  }
}

double sum(const double* x, int64_t n) {
  const int64_t blocks = (n + kSumBlock - 1) / kSumBlock;
  if (blocks <= 1) return sum_block(x, 0, n);
  double acc = 0.0;
  for (int64_t bi = 0; bi < blocks; ++bi) {
    acc += sum_block(x, bi * kSumBlock, std::min(n, (bi + 1) * kSumBlock));
  }
  return acc;
}

}  // namespace serial

}  // namespace gcu::kernels
