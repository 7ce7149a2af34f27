#pragma once

// Convolutional building blocks. All feature maps are [N, C, D, H, W].

#include <cstdint>
#include <string>
#include <vector>

#include "glims/init.hpp"
#include "glims/tensor.hpp"

namespace glims {

/// 1x1x1 convolution with bias.
struct Pointwise {
  Tensor weight;  // [out, in, 1, 1, 1]
  Tensor bias;    // [out]

  static Pointwise make(Initializer& init, std::int64_t in, std::int64_t out);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Dilated feature aggregator: parallel depth-wise dilated 3x3x3 convs, two
/// point-wise fusion convs (3C -> 2C -> C for three dilations), residual add and
/// instance normalization.
struct Dacb {
  std::int64_t channels = 0;
  std::vector<std::int64_t> dilations;
  std::vector<Tensor> depthwise;  // [C, 1, 3, 3, 3] each, no bias
  Pointwise fuse1;                // (#dilations * C) -> 2C
  Pointwise fuse2;                // 2C -> C
  double slope = 0.01;

  static Dacb make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                   double slope = 0.01);
  /// Residual sum before normalization; exposed for equivariance checks.
  Tensor pre_norm(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Encoder stage: two DACBs then a stride-2 2x2x2 conv doubling the channels.
struct Dmsf {
  Dacb first;
  Dacb second;
  Tensor down_weight;  // [2C, C, 2, 2, 2]
  Tensor down_bias;    // [2C]
  double slope = 0.01;

  struct Output {
    Tensor skip;
    Tensor down;
  };

  static Dmsf make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                   double slope = 0.01);
  Output forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Decoder stage: 2x2x2 transposed conv 2C -> C, concatenation with the refined
/// skip, 1x1x1 reduction 2C -> C, two DACBs.
struct Dmsu {
  Tensor up_weight;  // [2C, C, 2, 2, 2]
  Tensor up_bias;    // [C]
  Pointwise reduce;  // 2C -> C
  Dacb first;
  Dacb second;
  double slope = 0.01;

  static Dmsu make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                   double slope = 0.01);
  Tensor forward(const Tensor& x, const Tensor& skip_refined) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Channel and spatial attention gate applied to skip features.
struct Csab {
  std::int64_t channels = 0;
  std::int64_t hidden = 0;
  // Shared two-layer perceptron of the channel branch.
  Tensor mlp1_weight;  // [hidden, C]
  Tensor mlp1_bias;    // [hidden]
  Tensor mlp2_weight;  // [C, hidden]
  Tensor mlp2_bias;    // [C]
  Pointwise spatial;   // 2 -> 1
  double slope = 0.01;

  struct Output {
    Tensor refined;
    Tensor channel_attention;  // [N, C, 1, 1, 1]
    Tensor spatial_attention;  // [N, 1, D, H, W]
  };

  /// hidden = max(1, channels / reduction)
  static Csab make(Initializer& init, std::int64_t channels, std::int64_t reduction, double slope = 0.01);
  Output forward(const Tensor& y) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace glims
