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

#include "gcu/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gcu/rng.hpp"

namespace fs = std::filesystem;

namespace gcu {

void FundusSample::validate() const {
  if (image.ndim() != 3 || label.ndim() != 2 || fov.ndim() != 2) {
    throw DataError("sample " + name + ": wrong ranks");
  }
  if (label.dim(0) != image.dim(1) || label.dim(1) != image.dim(2) ||
      fov.dim(0) != image.dim(1) || fov.dim(1) != image.dim(2)) {
    throw DataError("sample " + name + ": image/label/fov extents differ");
  }
  for (double v : image.data()) {
    if (v < 0.0 || v > 1.0) {
      throw DataError("sample " + name + ": image values outside [0,1]");
    }
  }
  for (double v : label.data()) {
    if (v != 0.0 && v != 1.0) {
      throw DataError("sample " + name + ": label is not binary");
    }
  }
  for (double v : fov.data()) {
    if (v != 0.0 && v != 1.0) {
      throw DataError("sample " + name + ": fov is not binary");
    }
  }
}

namespace {

int next_token(std::istream& is) {
  // Skips whitespace and '#' comments, returns the next integer.
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v;
  if (!(is >> v)) throw DataError("raster: malformed header token");
  return v;
}

}  // namespace

RasterImage read_raster(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open raster: " + path);
  char p, kind;
  is.get(p);
  is.get(kind);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6')) {
    throw DataError("unsupported raster format (want PGM/PPM): " + path);
  }
  const bool color = kind == '3' || kind == '6';
  const bool ascii = kind == '2' || kind == '3';
  const int w = next_token(is);
  const int h = next_token(is);
  const int maxval = next_token(is);
  if (w < 1 || h < 1 || maxval != 255) {
    throw DataError("raster must be 8-bit with positive extents: " + path);
  }
  const int64_t channels = color ? 3 : 1;
  const int64_t n = static_cast<int64_t>(w) * h * channels;
  std::vector<uint8_t> raw(static_cast<size_t>(n));
  if (ascii) {
    for (int64_t i = 0; i < n; ++i) {
      int v;
      if (!(is >> v) || v < 0 || v > 255) {
        throw DataError("raster: bad ascii pixel in " + path);
      }
      raw[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
    }
  } else {
    is.get();  // single whitespace after maxval
    is.read(reinterpret_cast<char*>(raw.data()), n);
    if (is.gcount() != n) throw DataError("raster truncated: " + path);
  }
  RasterImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(w) * h);
  if (color) {
    // Green channel carries the vessel contrast.
    for (int64_t i = 0; i < static_cast<int64_t>(img.pixels.size()); ++i) {
      img.pixels[static_cast<size_t>(i)] = raw[static_cast<size_t>(3 * i + 1)];
    }
  } else {
    img.pixels = std::move(raw);
  }
  return img;
}

void write_pgm(const std::string& path, const RasterImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open raster for writing: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("raster write failed: " + path);
}

namespace {

Tensor raster_to_unit(const RasterImage& img) {
  std::vector<double> v(img.pixels.size());
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return Tensor::from_data({img.height, img.width}, std::move(v));
}

Tensor raster_to_binary(const RasterImage& img, const std::string& what) {
  std::vector<double> v(img.pixels.size());
  for (size_t i = 0; i < v.size(); ++i) {
    if (img.pixels[i] != 0 && img.pixels[i] != 255) {
      throw DataError(what + " contains non-binary byte " +
                      std::to_string(img.pixels[i]));
    }
    v[i] = img.pixels[i] == 255 ? 1.0 : 0.0;
  }
  return Tensor::from_data({img.height, img.width}, std::move(v));
}

std::vector<std::string> sorted_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("missing directory: " + dir.string());
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

std::vector<FundusSample> load_drive_layout(const std::string& root) {
  const fs::path base(root);
  const auto image_names = sorted_files(base / "images");
  if (image_names.empty()) {
    throw DataError("no images found under " + (base / "images").string());
  }
  std::vector<FundusSample> out;
  out.reserve(image_names.size());
  for (const auto& name : image_names) {
    const fs::path ip = base / "images" / name;
    const fs::path lp = base / "labels" / name;
    const fs::path mp = base / "masks" / name;
    if (!fs::exists(lp)) throw DataError("missing label for sample " + name);
    if (!fs::exists(mp)) throw DataError("missing mask for sample " + name);
    const RasterImage iraw = read_raster(ip.string());
    const RasterImage lraw = read_raster(lp.string());
    const RasterImage mraw = read_raster(mp.string());
    if (lraw.height != iraw.height || lraw.width != iraw.width ||
        mraw.height != iraw.height || mraw.width != iraw.width) {
      throw DataError("sample " + name + ": image/label/mask sizes differ");
    }
    FundusSample s;
    s.name = name;
    Tensor gray = raster_to_unit(iraw);
    s.image = Tensor::from_data({1, iraw.height, iraw.width}, gray.data());
    s.label = raster_to_binary(lraw, "label " + name);
    s.fov = raster_to_binary(mraw, "mask " + name);
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Stamp {
  int dy, dx;
};

// Width-1/2/3 pens around each skeleton pixel.
const std::vector<Stamp>& pen_for_width(int w) {
  static const std::vector<Stamp> w1 = {{0, 0}};
  static const std::vector<Stamp> w2 = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  static const std::vector<Stamp> w3 = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                        {0, 0},   {0, 1},  {1, -1}, {1, 0},
                                        {1, 1}};
  return w == 1 ? w1 : (w == 2 ? w2 : w3);
}

}  // namespace

FundusSample synthesize_sample(uint64_t seed, int64_t index, int64_t size,
                               SyntheticDebug* debug) {
  if (size < 16 || size % 8 != 0) {
    throw ConfigError("synthetic samples need size >= 16, divisible by 8");
  }
  Rng rng = Rng(seed).fork(static_cast<uint64_t>(index));
  const int64_t hw = size * size;

  // Smooth background: base level, a gentle ramp, and two soft blobs.
  std::vector<double> background(static_cast<size_t>(hw));
  const double base = rng.uniform(0.55, 0.8);
  const double gx = rng.uniform(-0.15, 0.15);
  const double gy = rng.uniform(-0.15, 0.15);
  struct Blob {
    double cy, cx, amp, sigma2;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 2; ++i) {
    Blob b;
    b.cy = rng.uniform(0, static_cast<double>(size));
    b.cx = rng.uniform(0, static_cast<double>(size));
    b.amp = rng.uniform(-0.08, 0.08);
    const double s = rng.uniform(0.2, 0.45) * static_cast<double>(size);
    b.sigma2 = s * s;
    blobs.push_back(b);
  }
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      double v = base + gx * (static_cast<double>(x) / size - 0.5) +
                 gy * (static_cast<double>(y) / size - 0.5);
      for (const Blob& b : blobs) {
        const double dy = static_cast<double>(y) - b.cy;
        const double dx = static_cast<double>(x) - b.cx;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma2));
      }
      background[static_cast<size_t>(y * size + x)] = v;
    }
  }

  // Random-walk vessel branches with unit steps (8-connected skeletons);
  // walks reflect off the borders so every branch keeps its full length.
  std::vector<uint8_t> label(static_cast<size_t>(hw), 0);
  std::vector<double> vessel_depth(static_cast<size_t>(hw), 0.0);
  const int64_t branches = rng.uniform_int(2, 4);
  for (int64_t bi = 0; bi < branches; ++bi) {
    const int width = bi == 0 ? 2 : static_cast<int>(rng.uniform_int(1, 3));
    const double depth = rng.uniform(0.25, 0.4);
    double y = rng.uniform(0.1, 0.9) * static_cast<double>(size);
    double x = rng.uniform(0.1, 0.9) * static_cast<double>(size);
    double theta = rng.uniform(0.0, 6.283185307179586);
    const int64_t steps =
        rng.uniform_int((size * 3) / 4, (size * 11) / 10);
    std::vector<uint8_t> skeleton(static_cast<size_t>(hw), 0);
    for (int64_t t = 0; t < steps; ++t) {
      const int64_t py = static_cast<int64_t>(std::lround(y));
      const int64_t px = static_cast<int64_t>(std::lround(x));
      if (py >= 0 && py < size && px >= 0 && px < size) {
        skeleton[static_cast<size_t>(py * size + px)] = 1;
        for (const Stamp& st : pen_for_width(width)) {
          const int64_t sy = py + st.dy, sx = px + st.dx;
          if (sy < 0 || sy >= size || sx < 0 || sx >= size) continue;
          label[static_cast<size_t>(sy * size + sx)] = 1;
          auto& d = vessel_depth[static_cast<size_t>(sy * size + sx)];
          d = std::max(d, depth);
        }
      }
      theta += 0.18 * rng.normal();
      double ny = y + std::sin(theta);
      double nx = x + std::cos(theta);
      if (ny < 1.0 || ny > static_cast<double>(size) - 2.0) {
        theta = -theta;
        ny = y + std::sin(theta);
      }
      if (nx < 1.0 || nx > static_cast<double>(size) - 2.0) {
        theta = 3.141592653589793 - theta;
        nx = x + std::cos(theta);
      }
      y = ny;
      x = nx;
    }
    if (debug) debug->branch_skeletons.push_back(std::move(skeleton));
  }

  std::vector<double> image(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) {
    double v = background[static_cast<size_t>(i)];
    if (label[static_cast<size_t>(i)]) {
      v -= vessel_depth[static_cast<size_t>(i)] + 0.02 * rng.normal();
    }
    v += 0.035 * rng.normal();
    image[static_cast<size_t>(i)] = std::clamp(v, 0.02, 0.98);
  }
  std::vector<double> label_d(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) {
    label_d[static_cast<size_t>(i)] = label[static_cast<size_t>(i)] ? 1.0 : 0.0;
  }

  FundusSample s;
  s.name = "synth-" + std::to_string(seed) + "-" + std::to_string(index);
  s.image = Tensor::from_data({1, size, size}, std::move(image));
  s.label = Tensor::from_data({size, size}, std::move(label_d));
  s.fov = Tensor::full({size, size}, 1.0);
  return s;
}

std::vector<FundusSample> generate_synthetic(uint64_t seed, int64_t count,
                                             int64_t size) {
  std::vector<FundusSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(synthesize_sample(seed, i, size));
  }
  return out;
}

std::vector<FundusSample> extract_patches(const FundusSample& s, int64_t size,
                                          int64_t stride) {
  const int64_t h = s.height(), w = s.width(), c = s.image.dim(0);
  if (size > std::min(h, w)) {
    throw ConfigError("patch size " + std::to_string(size) +
                      " exceeds sample extent " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  if (stride < 1) throw ConfigError("patch stride must be >= 1");
  std::vector<FundusSample> out;
  const auto& iv = s.image.data();
  const auto& lv = s.label.data();
  const auto& fv = s.fov.data();
  for (int64_t y = 0; y + size <= h; y += stride) {
    for (int64_t x = 0; x + size <= w; x += stride) {
      std::vector<double> pi(static_cast<size_t>(c * size * size));
      std::vector<double> pl(static_cast<size_t>(size * size));
      std::vector<double> pf(static_cast<size_t>(size * size));
      for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t yy = 0; yy < size; ++yy) {
          for (int64_t xx = 0; xx < size; ++xx) {
            pi[static_cast<size_t>((ci * size + yy) * size + xx)] =
                iv[static_cast<size_t>((ci * h + y + yy) * w + x + xx)];
          }
        }
      }
      for (int64_t yy = 0; yy < size; ++yy) {
        for (int64_t xx = 0; xx < size; ++xx) {
          pl[static_cast<size_t>(yy * size + xx)] =
              lv[static_cast<size_t>((y + yy) * w + x + xx)];
          pf[static_cast<size_t>(yy * size + xx)] =
              fv[static_cast<size_t>((y + yy) * w + x + xx)];
        }
      }
      FundusSample p;
      p.name = s.name + "+" + std::to_string(y) + "+" + std::to_string(x);
      p.image = Tensor::from_data({c, size, size}, std::move(pi));
      p.label = Tensor::from_data({size, size}, std::move(pl));
      p.fov = Tensor::from_data({size, size}, std::move(pf));
      out.push_back(std::move(p));
    }
  }
  return out;
}

void save_mask(const Tensor& mask, const std::string& path) {
  if (mask.ndim() != 2) throw ShapeError("save_mask: mask must be [H,W]");
  RasterImage img;
  img.height = mask.dim(0);
  img.width = mask.dim(1);
  img.pixels.resize(mask.data().size());
  const auto& mv = mask.data();
  for (size_t i = 0; i < mv.size(); ++i) {
    if (mv[i] < 0.0 || mv[i] > 1.0) {
      throw ContractError("save_mask: values must lie in [0,1]");
    }
    img.pixels[i] = static_cast<uint8_t>(std::floor(mv[i] * 255.0 + 0.5));
  }
  write_pgm(path, img);
}

Tensor load_mask(const std::string& path) {
  return raster_to_unit(read_raster(path));
}

void write_drive_layout(const std::string& root,
                        const std::vector<FundusSample>& samples) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "labels");
  fs::create_directories(base / "masks");
  char buf[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    const FundusSample& s = samples[i];
    std::snprintf(buf, sizeof(buf), "%04zu.pgm", i);
    RasterImage img;
    img.height = s.height();
    img.width = s.width();
    img.pixels.resize(static_cast<size_t>(img.height * img.width));
    const auto& iv = s.image.data();  // first channel
    for (size_t j = 0; j < img.pixels.size(); ++j) {
      img.pixels[j] = static_cast<uint8_t>(std::floor(iv[j] * 255.0 + 0.5));
    }
    write_pgm((base / "images" / buf).string(), img);
    for (size_t j = 0; j < img.pixels.size(); ++j) {
      img.pixels[j] = s.label.data()[j] == 1.0 ? 255 : 0;
    }
    write_pgm((base / "labels" / buf).string(), img);
    for (size_t j = 0; j < img.pixels.size(); ++j) {
      img.pixels[j] = s.fov.data()[j] == 1.0 ? 255 : 0;
    }
    write_pgm((base / "masks" / buf).string(), img);
  }
}

namespace {

// k in 0..3 quarter turns, then optional horizontal flip. Square inputs.
std::vector<double> transform_plane(const std::vector<double>& in, int64_t n,
                                    int rot, bool flip) {
  std::vector<double> out(in.size());
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      int64_t sy = y, sx = x;
      switch (rot) {
        case 1: sy = n - 1 - x; sx = y; break;
        case 2: sy = n - 1 - y; sx = n - 1 - x; break;
        case 3: sy = x; sx = n - 1 - y; break;
        default: break;
      }
      if (flip) sx = n - 1 - sx;
      out[static_cast<size_t>(y * n + x)] =
          in[static_cast<size_t>(sy * n + sx)];
    }
  }
  return out;
}

}  // namespace

std::vector<FundusSample> augment_flips_rotations(
    const std::vector<FundusSample>& samples, uint64_t seed) {
  Rng rng(seed);
  std::vector<FundusSample> out;
  out.reserve(samples.size() * 2);
  for (const FundusSample& s : samples) {
    out.push_back(s);
    if (s.height() != s.width()) continue;  // rotations need square patches
    const int64_t n = s.height();
    const int64_t code = rng.uniform_int(1, 7);
    const int rot = static_cast<int>(code & 3);
    const bool flip = (code & 4) != 0;
    FundusSample t;
    t.name = s.name + "~aug" + std::to_string(code);
    const int64_t c = s.image.dim(0);
    std::vector<double> img;
    img.reserve(static_cast<size_t>(c * n * n));
    for (int64_t ci = 0; ci < c; ++ci) {
      std::vector<double> plane(
          s.image.data().begin() + ci * n * n,
          s.image.data().begin() + (ci + 1) * n * n);
      auto tp = transform_plane(plane, n, rot, flip);
      img.insert(img.end(), tp.begin(), tp.end());
    }
    t.image = Tensor::from_data({c, n, n}, std::move(img));
    t.label = Tensor::from_data({n, n},
                                transform_plane(s.label.data(), n, rot, flip));
    t.fov =
        Tensor::from_data({n, n}, transform_plane(s.fov.data(), n, rot, flip));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace gcu
