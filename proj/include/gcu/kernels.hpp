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

#ifndef GCU_KERNELS_HPP_
#define GCU_KERNELS_HPP_

#include <cstdint>

// Hot inner loops of the tensor library. The default entry points are
// OpenMP-parallel; kernels::serial holds plain-loop reference versions that
// the tests compare against and the benchmark times. Both variants compute
// each output element with the same serial reduction order, so results are
// bit-identical for any thread count.

namespace gcu::kernels {

struct Conv2dDims {
  int64_t batch, cin, h, w;   // input  [B, Cin, H, W]
  int64_t cout, k;            // kernel [Cout, Cin, k, k]
  int64_t stride, pad;
  int64_t ho, wo;             // output [B, Cout, Ho, Wo]
};

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gout, const double* in, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gout, double* gb, const Conv2dDims& d);

// c[M,N] = a[M,K] * b[K,N]
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n);
// out[N,M] = in[M,N]^T
void transpose(const double* in, double* out, int64_t m, int64_t n);

// 2x2 stride-2 max pooling; argmax records the flat input offset per output.
void maxpool2x2_forward(const double* in, double* out, int64_t* argmax,
                        int64_t b, int64_t c, int64_t h, int64_t w);
void maxpool2x2_backward(const double* gout, const int64_t* argmax,
                         double* gin, int64_t n_out);

// Deterministic blocked sum: identical result for any thread count.
double sum(const double* x, int64_t n);

namespace serial {
void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* gout, const double* w, double* gin,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gout, const double* in, double* gw,
                            const Conv2dDims& d);
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k,
            int64_t n);
void maxpool2x2_forward(const double* in, double* out, int64_t* argmax,
                        int64_t b, int64_t c, int64_t h, int64_t w);
double sum(const double* x, int64_t n);
}  // namespace serial

}  // namespace gcu::kernels

#endif  // GCU_KERNELS_HPP_
