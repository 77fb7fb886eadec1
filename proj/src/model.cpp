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

#include "gcu/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace gcu {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::LocalOnly: return "local_only";
    case Variant::GlobalVanilla: return "global_vanilla";
    case Variant::GlobalGc: return "global_gc";
    case Variant::Fusion: return "fusion";
  }
  return "?";
}

const char* to_string(FusionWiring m) {
  return m == FusionWiring::Serial ? "serial" : "parallel";
}

const char* to_string(MsgfMode m) {
  switch (m) {
    case MsgfMode::Shared: return "shared";
    case MsgfMode::Concat: return "concat";
    case MsgfMode::Individual: return "individual";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "local_only") return Variant::LocalOnly;
  if (s == "global_vanilla") return Variant::GlobalVanilla;
  if (s == "global_gc") return Variant::GlobalGc;
  if (s == "fusion") return Variant::Fusion;
  throw ConfigError("unknown variant: " + s);
}

FusionWiring wiring_from_string(const std::string& s) {
  if (s == "serial") return FusionWiring::Serial;
  if (s == "parallel") return FusionWiring::Parallel;
  throw ConfigError("unknown fusion mode: " + s);
}

MsgfMode msgf_mode_from_string(const std::string& s) {
  if (s == "shared") return MsgfMode::Shared;
  if (s == "concat") return MsgfMode::Concat;
  if (s == "individual") return MsgfMode::Individual;
  throw ConfigError("unknown msgf mode: " + s);
}

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("model: depth must be >= 1");
  if (base_channels < 1) throw ConfigError("model: base_channels must be >= 1");
  if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  if (caps_l < 1 || caps_v < 1 || caps_k < 1 || caps_channels < 1 ||
      routing_iterations < 1) {
    throw ConfigError("model: capsule extents must be positive");
  }
  if (caps_k % 2 == 0) throw ConfigError("model: caps_k must be odd");
  if (use_msgf && depth < 3) {
    throw ConfigError("model: msgf requires depth >= 3 (three decoder scales)");
  }
  if (sga_max_nodes < 1 || sga_knn < 1) {
    throw ConfigError("model: sga_max_nodes and sga_knn must be >= 1");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["depth"] = depth;
  j["base_channels"] = base_channels;
  j["in_channels"] = in_channels;
  j["variant"] = to_string(variant);
  j["fusion_mode"] = to_string(fusion_mode);
  j["use_bga"] = use_bga;
  j["use_msgf"] = use_msgf;
  j["msgf_mode"] = to_string(msgf_mode);
  j["caps_l"] = caps_l;
  j["caps_v"] = caps_v;
  j["caps_k"] = caps_k;
  j["caps_channels"] = caps_channels;
  j["routing_iterations"] = routing_iterations;
  j["sga_max_nodes"] = sga_max_nodes;
  j["sga_knn"] = sga_knn;
  j["seed"] = seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("depth")) c.depth = j["depth"].get<int64_t>();
    if (j.contains("base_channels")) c.base_channels = j["base_channels"].get<int64_t>();
    if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<int64_t>();
    if (j.contains("variant")) c.variant = variant_from_string(j["variant"].get<std::string>());
    if (j.contains("fusion_mode")) c.fusion_mode = wiring_from_string(j["fusion_mode"].get<std::string>());
    if (j.contains("use_bga")) c.use_bga = j["use_bga"].get<bool>();
    if (j.contains("use_msgf")) c.use_msgf = j["use_msgf"].get<bool>();
    if (j.contains("msgf_mode")) c.msgf_mode = msgf_mode_from_string(j["msgf_mode"].get<std::string>());
    if (j.contains("caps_l")) c.caps_l = j["caps_l"].get<int64_t>();
    if (j.contains("caps_v")) c.caps_v = j["caps_v"].get<int64_t>();
    if (j.contains("caps_k")) c.caps_k = j["caps_k"].get<int64_t>();
    if (j.contains("caps_channels")) c.caps_channels = j["caps_channels"].get<int64_t>();
    if (j.contains("routing_iterations")) c.routing_iterations = j["routing_iterations"].get<int64_t>();
    if (j.contains("sga_max_nodes")) c.sga_max_nodes = j["sga_max_nodes"].get<int64_t>();
    if (j.contains("sga_knn")) c.sga_knn = j["sga_knn"].get<int64_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

CapsuleConvConfig caps_config(const ModelConfig& cfg, CapsGateMode gate) {
  CapsuleConvConfig cc;
  cc.caps_l = cfg.caps_l;
  cc.atoms_v = cfg.caps_v;
  cc.kernel_k = cfg.caps_k;
  cc.caps_channels = cfg.caps_channels;
  cc.routing_iterations = cfg.routing_iterations;
  cc.gate = gate;
  return cc;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const bool capsule_variant = cfg_.variant == Variant::GlobalVanilla ||
                               cfg_.variant == Variant::GlobalGc;
  const CapsGateMode gate_mode = cfg_.variant == Variant::GlobalVanilla
                                     ? CapsGateMode::Off
                                     : CapsGateMode::Sigmoid;

  int64_t c_prev = cfg_.in_channels;
  for (int64_t s = 0; s < cfg_.depth; ++s) {
    const int64_t c = cfg_.base_channels << s;
    const std::string p = "enc" + std::to_string(s);
    EncoderStage stage;
    if (cfg_.variant == Variant::Fusion) {
      stage.conv_a = make_conv2d(reg_, p + ".conv_a", c_prev, c, 3, 1,
                                 ParamKind::Conv, rng);
      stage.conv_b =
          make_conv2d(reg_, p + ".conv_b", c, c, 3, 1, ParamKind::Conv, rng);
      stage.caps = std::make_unique<CapsuleConvBlock>(make_capsule_conv(
          reg_, p + ".caps", c, c, caps_config(cfg_, CapsGateMode::Sigmoid),
          rng));
      stage.sgaf =
          std::make_unique<SgafBlock>(make_sgaf(reg_, p + ".sgaf", c, rng));
    } else if (capsule_variant) {
      stage.caps = std::make_unique<CapsuleConvBlock>(make_capsule_conv(
          reg_, p + ".caps", c_prev, c, caps_config(cfg_, gate_mode), rng));
    } else {  // LocalOnly
      stage.conv_a = make_conv2d(reg_, p + ".conv_a", c_prev, c, 3, 1,
                                 ParamKind::Conv, rng);
      stage.conv_b =
          make_conv2d(reg_, p + ".conv_b", c, c, 3, 1, ParamKind::Conv, rng);
    }
    encoder_.push_back(std::move(stage));
    c_prev = c;
  }

  const int64_t c_bott = cfg_.base_channels << cfg_.depth;
  bottleneck_a_ = make_conv2d(reg_, "bottleneck.conv_a", c_prev, c_bott, 3, 1,
                              ParamKind::Conv, rng);
  bottleneck_b_ = make_conv2d(reg_, "bottleneck.conv_b", c_bott, c_bott, 3, 1,
                              ParamKind::Conv, rng);
  if (cfg_.use_bga) {
    bga_ = std::make_unique<BgaBlock>(make_bga(reg_, "bottleneck.bga", c_bott,
                                               rng, 0.4, cfg_.sga_max_nodes,
                                               cfg_.sga_knn));
  }

  int64_t c_deep = c_bott;
  for (int64_t s = cfg_.depth - 1; s >= 0; --s) {
    const int64_t c = cfg_.base_channels << s;
    const std::string p = "dec" + std::to_string(s);
    DecoderStage stage;
    stage.upconv = make_conv2d(reg_, p + ".upconv", c_deep, c, 3, 1,
                               ParamKind::Conv, rng);
    if (cfg_.variant == Variant::Fusion) {
      stage.sgaf =
          std::make_unique<SgafBlock>(make_sgaf(reg_, p + ".sgaf", c, rng));
      stage.conv_a =
          make_conv2d(reg_, p + ".conv_a", c, c, 3, 1, ParamKind::Conv, rng);
    } else if (capsule_variant) {
      stage.caps = std::make_unique<CapsuleConvBlock>(make_capsule_conv(
          reg_, p + ".caps", 2 * c, c, caps_config(cfg_, gate_mode), rng));
    } else {
      stage.conv_a = make_conv2d(reg_, p + ".conv_a", 2 * c, c, 3, 1,
                                 ParamKind::Conv, rng);
      stage.conv_b =
          make_conv2d(reg_, p + ".conv_b", c, c, 3, 1, ParamKind::Conv, rng);
    }
    decoder_.push_back(std::move(stage));
    c_deep = c;
  }

  if (cfg_.use_msgf) {
    const int64_t c0 = cfg_.base_channels;
    msgf_ = std::make_unique<MsgfBlock>(
        make_msgf(reg_, "msgf", c0, c0 * 2, c0 * 4, 2, 4, cfg_.msgf_mode, rng));
  }
  head_ = make_conv2d(reg_, "head", cfg_.base_channels, 2, 1, 0,
                      ParamKind::Conv, rng);
}

Tensor Model::forward(const Tensor& image) const {
  if (image.ndim() != 4 || image.dim(1) != cfg_.in_channels) {
    throw ShapeError("model: expected input [B," +
                     std::to_string(cfg_.in_channels) + ",H,W], got " +
                     shape_str(image.shape()));
  }
  const int64_t divisor = int64_t{1} << cfg_.depth;
  if (image.dim(2) % divisor != 0 || image.dim(3) % divisor != 0) {
    throw ShapeError("model: spatial extents " + shape_str(image.shape()) +
                     " must be divisible by " + std::to_string(divisor) +
                     "; pad the image to a multiple of " +
                     std::to_string(divisor));
  }

  const bool capsule_variant = cfg_.variant == Variant::GlobalVanilla ||
                               cfg_.variant == Variant::GlobalGc;
  std::vector<Tensor> skips(static_cast<size_t>(cfg_.depth));
  Tensor x = image;
  for (int64_t s = 0; s < cfg_.depth; ++s) {
    const EncoderStage& st = encoder_[static_cast<size_t>(s)];
    Tensor stage_out;
    if (cfg_.variant == Variant::Fusion) {
      Tensor stem = relu(st.conv_a.forward(x));
      Tensor local = relu(st.conv_b.forward(stem));
      Tensor global_in =
          cfg_.fusion_mode == FusionWiring::Serial ? local : stem;
      Tensor global = st.caps->forward(global_in);
      stage_out = st.sgaf->forward(local, global);
      skips[static_cast<size_t>(s)] = global;
    } else if (capsule_variant) {
      stage_out = st.caps->forward(x);
      skips[static_cast<size_t>(s)] = stage_out;
    } else {
      Tensor stem = relu(st.conv_a.forward(x));
      stage_out = relu(st.conv_b.forward(stem));
      skips[static_cast<size_t>(s)] = stage_out;
    }
    x = max_pool2x2(stage_out);
  }

  x = relu(bottleneck_a_.forward(x));
  x = relu(bottleneck_b_.forward(x));
  if (bga_) x = bga_->forward(x);

  std::vector<Tensor> dec_out(static_cast<size_t>(cfg_.depth));
  for (size_t i = 0; i < decoder_.size(); ++i) {
    const int64_t s = cfg_.depth - 1 - static_cast<int64_t>(i);
    const DecoderStage& st = decoder_[i];
    Tensor up = relu(st.upconv.forward(upsample_nearest(x, 2)));
    if (cfg_.variant == Variant::Fusion) {
      Tensor fused = st.sgaf->forward(up, skips[static_cast<size_t>(s)]);
      x = relu(st.conv_a.forward(fused));
    } else if (capsule_variant) {
      Tensor cat = concat({up, skips[static_cast<size_t>(s)]}, 1);
      x = st.caps->forward(cat);
    } else {
      Tensor cat = concat({up, skips[static_cast<size_t>(s)]}, 1);
      x = relu(st.conv_a.forward(cat));
      x = relu(st.conv_b.forward(x));
    }
    dec_out[static_cast<size_t>(s)] = x;
  }

  if (msgf_) {
    x = msgf_->forward(dec_out[0], dec_out[1], dec_out[2]);
  }
  return head_.forward(x);
}

std::map<std::string, int64_t> Model::param_breakdown() const {
  std::map<std::string, int64_t> out;
  for (const auto& p : reg_.items()) {
    const auto dot = p.name.find('.');
    out[p.name.substr(0, dot)] += p.tensor.numel();
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'G', 'C', 'U', 'W'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated: " + path);
  return v;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(reg_.items().size()));
  for (const auto& p : reg_.items()) {
    write_pod(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(os, static_cast<uint32_t>(p.tensor.ndim()));
    for (int64_t d : p.tensor.shape()) write_pod(os, static_cast<uint64_t>(d));
    const auto& data = p.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

void Model::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a weight checkpoint: " + path);
  }
  const uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + ": " + path);
  }
  const uint64_t count = read_pod<uint64_t>(is, path);
  if (count != reg_.items().size()) {
    throw DataError("checkpoint holds " + std::to_string(count) +
                    " parameters but the model has " +
                    std::to_string(reg_.items().size()) + ": " + path);
  }
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint truncated: " + path);
    const uint32_t ndim = read_pod<uint32_t>(is, path);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    }
    Parameter* p = reg_.find(name);
    if (!p) throw DataError("checkpoint parameter unknown to model: " + name);
    if (p->tensor.shape() != shape) {
      throw DataError("checkpoint shape mismatch for " + name + ": file " +
                      shape_str(shape) + " vs model " +
                      shape_str(p->tensor.shape()));
    }
    auto& dst = p->tensor.mutable_data();
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint truncated: " + path);
  }
}

std::vector<std::vector<double>> Model::snapshot_weights() const {
  std::vector<std::vector<double>> out;
  out.reserve(reg_.items().size());
  for (const auto& p : reg_.items()) out.push_back(p.tensor.data());
  return out;
}

void Model::restore_weights(const std::vector<std::vector<double>>& weights) {
  if (weights.size() != reg_.items().size()) {
    throw ContractError("restore_weights: snapshot size mismatch");
  }
  size_t i = 0;
  for (const auto& p : reg_.items()) p.tensor.mutable_data() = weights[i++];
}

}  // namespace gcu
