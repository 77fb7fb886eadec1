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

#ifndef GCU_DATA_HPP_
#define GCU_DATA_HPP_

#include <string>
#include <vector>

#include "gcu/tensor.hpp"

namespace gcu {

/// One fundus image with its vessel annotation and field-of-view mask.
struct FundusSample {
  Tensor image;  // [C, H, W] in [0, 1]
  Tensor label;  // [H, W] binary
  Tensor fov;    // [H, W] binary
  std::string name;

  int64_t height() const { return image.dim(1); }
  int64_t width() const { return image.dim(2); }
  void validate() const;
};

// 8-bit grayscale raster I/O (PGM P5; P2 also readable). Color PPM (P6/P3)
// images are reduced to their green channel, the vessel-contrast convention
// for fundus photographs.
struct RasterImage {
  int64_t height = 0, width = 0;
  std::vector<uint8_t> pixels;  // row-major grayscale
};

RasterImage read_raster(const std::string& path);
void write_pgm(const std::string& path, const RasterImage& img);

/// Loads a DRIVE-style directory: images/, labels/, masks/ with matching
/// file stems. Labels and masks must be strictly binary rasters ({0, 255}).
/// Samples are ordered by file name; by convention the first half is the
/// training split (20/20 for the 40-image DRIVE layout).
std::vector<FundusSample> load_drive_layout(const std::string& root);

/// Deterministic synthetic fundus-like corpus: dark random-walk vessel trees
/// (2-4 branches, widths 1-3 px) over a smooth noisy background. The field
/// of view is the full frame.
std::vector<FundusSample> generate_synthetic(uint64_t seed, int64_t count,
                                             int64_t size);

/// Test hook: per-branch skeletons and the final label for one sample.
struct SyntheticDebug {
  std::vector<std::vector<uint8_t>> branch_skeletons;  // H*W each
};
FundusSample synthesize_sample(uint64_t seed, int64_t index, int64_t size,
                               SyntheticDebug* debug = nullptr);

/// Joint sliding-window crops of image/label/fov.
std::vector<FundusSample> extract_patches(const FundusSample& s, int64_t size,
                                          int64_t stride);

/// Probability mask I/O: byte = round(p * 255), half away from zero.
void save_mask(const Tensor& mask, const std::string& path);
Tensor load_mask(const std::string& path);

/// Writes samples into the DRIVE directory convention under `root`.
void write_drive_layout(const std::string& root,
                        const std::vector<FundusSample>& samples);

/// Deterministic flip/rotation augmentation (horizontal flip and 90-degree
/// rotations), one extra view per sample drawn from the seeded stream.
std::vector<FundusSample> augment_flips_rotations(
    const std::vector<FundusSample>& samples, uint64_t seed);

}  // namespace gcu

#endif  // GCU_DATA_HPP_
