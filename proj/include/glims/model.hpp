#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glims/blocks.hpp"
#include "glims/init.hpp"
#include "glims/swin3d.hpp"
#include "glims/tensor.hpp"

namespace glims {

/// Architecture description. Level l has base_channels * 2^l channels at
/// patch_size / 2^l resolution; the bottleneck sits one level below the last.
/// The first cnn_levels levels are convolutional; the remaining
/// transformer_depths.size() levels are Swin stages.
struct ModelConfig {
  std::int64_t in_channels = 4;
  std::int64_t num_classes = 4;
  std::int64_t base_channels = 24;
  std::int64_t num_levels = 5;
  std::int64_t cnn_levels = 3;
  std::vector<std::int64_t> transformer_depths{2, 6};
  /// Swin blocks in the bottleneck; 0 selects a convolutional bottleneck of two DACBs.
  std::int64_t bottleneck_depth = 2;
  std::vector<std::int64_t> dilations{1, 2, 3};
  std::int64_t window = 7;
  double mlp_ratio = 4.0;
  std::int64_t head_dim = 32;
  std::int64_t csab_reduction = 8;
  std::int64_t patch_size = 96;
  std::int64_t deep_supervision_levels = 4;
  double leaky_slope = 0.01;

  static ModelConfig full();
  /// Reduced network used for the overfit experiment.
  static ModelConfig reduced();

  std::int64_t channels(std::int64_t level) const { return base_channels << level; }
  std::int64_t extent(std::int64_t level) const { return patch_size >> level; }
  bool is_transformer_level(std::int64_t level) const { return level >= cnn_levels; }
  std::int64_t heads(std::int64_t channels) const;
  std::int64_t depth(std::int64_t level) const;

  /// Every violated constraint, empty when valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing all violations.
  void validate() const;

  /// Canonical text form of every field; the basis of the fingerprint.
  std::string canonical() const;
  std::uint64_t fingerprint() const;
};

struct ForwardOutput {
  Tensor logits;
  /// Auxiliary logits; aux[i] is at 1 / 2^(i+1) resolution.
  std::vector<Tensor> aux;
  /// CSAB attention per skip level, shallow to deep.
  std::vector<Tensor> channel_attention;
  std::vector<Tensor> spatial_attention;
};

class GlimsModel {
 public:
  static GlimsModel build(const ModelConfig& config, std::uint64_t seed, DType dtype = DType::f32);

  /// x [N, in_channels, P, P, P] with P = patch_size.
  ForwardOutput forward(const Tensor& x) const;

  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }
  const ParamList& parameters() const { return params_; }
  std::int64_t count_parameters() const;

 private:
  struct EncoderLevel {
    Dmsf cnn;
    SwinStage swin;
    PatchMerge merge;
  };
  struct DecoderLevel {
    Dmsu cnn;
    PatchExpand expand;
    Tensor fuse_weight;  // [C, 2C]
    Tensor fuse_bias;
    SwinStage swin;
  };

  ModelConfig config_;
  DType dtype_ = DType::f32;
  Pointwise stem_;
  std::vector<EncoderLevel> encoder_;
  SwinStage bottleneck_swin_;
  Dacb bottleneck_first_;
  Dacb bottleneck_second_;
  std::vector<Csab> csab_;
  std::vector<DecoderLevel> decoder_;
  Pointwise head_;
  std::vector<Pointwise> aux_heads_;  // index i -> level i + 1
  ParamList params_;
};

/// Parameter totals grouped by the leading components of their names
/// (e.g. "encoder.3", "csab.0").
std::vector<std::pair<std::string, std::int64_t>> parameter_breakdown(const ParamList& params);

/// Analytic FLOPs of one forward pass (multiply-accumulate = 2 FLOPs) over
/// convolutions, linear layers and attention products at the given cubic
/// input extent.
std::int64_t estimate_flops(const ModelConfig& config, std::int64_t extent, std::int64_t batch = 1);

}  // namespace glims
