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

#ifndef GCU_MODEL_HPP_
#define GCU_MODEL_HPP_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gcu/capsule.hpp"
#include "gcu/fusion.hpp"
#include "gcu/tensor.hpp"

namespace gcu {

enum class Variant { LocalOnly, GlobalVanilla, GlobalGc, Fusion };
enum class FusionWiring { Serial, Parallel };

const char* to_string(Variant v);
const char* to_string(FusionWiring m);
const char* to_string(MsgfMode m);
Variant variant_from_string(const std::string& s);
FusionWiring wiring_from_string(const std::string& s);
MsgfMode msgf_mode_from_string(const std::string& s);

struct ModelConfig {
  int64_t depth = 3;
  int64_t base_channels = 16;
  int64_t in_channels = 1;
  Variant variant = Variant::Fusion;
  FusionWiring fusion_mode = FusionWiring::Serial;
  bool use_bga = true;
  bool use_msgf = true;
  MsgfMode msgf_mode = MsgfMode::Shared;
  int64_t caps_l = 4;
  int64_t caps_v = 4;
  int64_t caps_k = 3;
  int64_t caps_channels = 4;
  int64_t routing_iterations = 3;
  int64_t sga_max_nodes = 256;
  int64_t sga_knn = 8;
  uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// The assembled segmentation network. Encoder stages extract local (CNN)
/// and global (capsule) features and fuse them; the bottleneck optionally
/// applies BGA; decoder stages fuse upsampled features with the encoder's
/// global skip features; MSGF merges the three decoder scales before the
/// two-class head.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  /// image [B, in_channels, H, W] with H, W divisible by 2^depth
  /// -> logits [B, 2, H, W].
  Tensor forward(const Tensor& image) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  int64_t param_count() const { return reg_.total_scalars(); }
  /// Scalar counts keyed by top-level name prefix (enc0, bottleneck, ...).
  std::map<std::string, int64_t> param_breakdown() const;

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  /// Copies of all parameter values, in registry order (for best-epoch
  /// snapshots).
  std::vector<std::vector<double>> snapshot_weights() const;
  void restore_weights(const std::vector<std::vector<double>>& weights);

 private:
  struct EncoderStage {
    Conv2dLayer conv_a, conv_b;
    std::unique_ptr<CapsuleConvBlock> caps;
    std::unique_ptr<SgafBlock> sgaf;
  };
  struct DecoderStage {
    Conv2dLayer upconv;
    std::unique_ptr<SgafBlock> sgaf;   // fusion variant
    Conv2dLayer conv_a;                // post-fusion conv (fusion) or merge conv
    Conv2dLayer conv_b;                // local-only second conv
    std::unique_ptr<CapsuleConvBlock> caps;  // global variants
  };

  ModelConfig cfg_;
  ParamRegistry reg_;
  std::vector<EncoderStage> encoder_;
  Conv2dLayer bottleneck_a_, bottleneck_b_;
  std::unique_ptr<BgaBlock> bga_;
  std::vector<DecoderStage> decoder_;
  std::unique_ptr<MsgfBlock> msgf_;
  Conv2dLayer head_;
};

}  // namespace gcu

#endif  // GCU_MODEL_HPP_
