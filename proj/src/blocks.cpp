#include "glims/blocks.hpp"

#include "glims/ops.hpp"

namespace glims {
namespace {

const Tensor kNoBias;

void require_channels(const Tensor& x, std::int64_t channels, const char* block) {
  if (x.rank() != 5)
    throw ShapeError(std::string(block) + ": expected [N, C, D, H, W], got " + shape_str(x.shape()));
  if (x.dim(1) != channels)
    throw ShapeError(std::string(block) + ": expected " + std::to_string(channels) +
                     " channels (axis 1), got " + std::to_string(x.dim(1)));
}

}  // namespace

Pointwise Pointwise::make(Initializer& init, std::int64_t in, std::int64_t out) {
  return {init.kaiming({out, in, 1, 1, 1}, in), init.zeros({out})};
}

Tensor Pointwise::forward(const Tensor& x) const { return conv3d(x, weight, bias, {}); }

void Pointwise::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Dacb Dacb::make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                double slope) {
  if (channels < 1) throw ConfigError("dacb: channels must be positive");
  if (dilations.empty()) throw ConfigError("dacb: empty dilation set");
  Dacb b;
  b.channels = channels;
  b.dilations = dilations;
  b.slope = slope;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    if (dilations[i] < 1) throw ConfigError("dacb: dilations must be >= 1");
    b.depthwise.push_back(init.kaiming({channels, 1, 3, 3, 3}, 27));
  }
  const auto cat = static_cast<std::int64_t>(dilations.size()) * channels;
  b.fuse1 = Pointwise::make(init, cat, 2 * channels);
  b.fuse2 = Pointwise::make(init, 2 * channels, channels);
  return b;
}

Tensor Dacb::pre_norm(const Tensor& x) const {
  require_channels(x, channels, "dacb");
  std::vector<Tensor> branches;
  branches.reserve(dilations.size());
  for (std::size_t i = 0; i < dilations.size(); ++i)
    branches.push_back(conv3d(x, depthwise[i], kNoBias,
                              {.dilation = dilations[i], .padding = dilations[i], .groups = channels}));
  Tensor fused = fuse2.forward(leaky_relu(fuse1.forward(concat(branches, 1)), slope));
  return add(x, fused);
}

Tensor Dacb::forward(const Tensor& x) const { return instance_norm(pre_norm(x)); }

void Dacb::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < depthwise.size(); ++i)
    out.push_back({prefix + ".dw" + std::to_string(dilations[i]) + ".weight", depthwise[i]});
  fuse1.collect(prefix + ".fuse1", out);
  fuse2.collect(prefix + ".fuse2", out);
}

Dmsf Dmsf::make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                double slope) {
  Dmsf s;
  s.first = Dacb::make(init, channels, dilations, slope);
  s.second = Dacb::make(init, channels, dilations, slope);
  s.down_weight = init.kaiming({2 * channels, channels, 2, 2, 2}, 8 * channels);
  s.down_bias = init.zeros({2 * channels});
  s.slope = slope;
  return s;
}

Dmsf::Output Dmsf::forward(const Tensor& x) const {
  require_channels(x, first.channels, "dmsf");
  for (int a = 2; a < 5; ++a)
    if (x.dim(a) % 2 != 0)
      throw ShapeError("dmsf: spatial axis " + std::to_string(a) + " has odd extent " + std::to_string(x.dim(a)));
  Tensor skip = second.forward(first.forward(x));
  Tensor down = leaky_relu(conv3d(skip, down_weight, down_bias, {.stride = 2}), slope);
  return {skip, down};
}

void Dmsf::collect(const std::string& prefix, ParamList& out) const {
  first.collect(prefix + ".dacb0", out);
  second.collect(prefix + ".dacb1", out);
  out.push_back({prefix + ".down.weight", down_weight});
  out.push_back({prefix + ".down.bias", down_bias});
}

Dmsu Dmsu::make(Initializer& init, std::int64_t channels, const std::vector<std::int64_t>& dilations,
                double slope) {
  Dmsu s;
  s.up_weight = init.kaiming({2 * channels, channels, 2, 2, 2}, 8 * channels);
  s.up_bias = init.zeros({channels});
  s.reduce = Pointwise::make(init, 2 * channels, channels);
  s.first = Dacb::make(init, channels, dilations, slope);
  s.second = Dacb::make(init, channels, dilations, slope);
  s.slope = slope;
  return s;
}

Tensor Dmsu::forward(const Tensor& x, const Tensor& skip_refined) const {
  const std::int64_t c = first.channels;
  require_channels(x, 2 * c, "dmsu");
  require_channels(skip_refined, c, "dmsu skip");
  Tensor up = leaky_relu(conv3d_transpose(x, up_weight, up_bias), slope);
  for (int a = 2; a < 5; ++a)
    if (up.dim(a) != skip_refined.dim(a))
      throw ShapeError("dmsu: upsampled extent " + std::to_string(up.dim(a)) + " on axis " + std::to_string(a) +
                       " does not match skip extent " + std::to_string(skip_refined.dim(a)));
  Tensor merged = reduce.forward(concat({up, skip_refined}, 1));
  return second.forward(first.forward(merged));
}

void Dmsu::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".up.weight", up_weight});
  out.push_back({prefix + ".up.bias", up_bias});
  reduce.collect(prefix + ".reduce", out);
  first.collect(prefix + ".dacb0", out);
  second.collect(prefix + ".dacb1", out);
}

Csab Csab::make(Initializer& init, std::int64_t channels, std::int64_t reduction, double slope) {
  if (channels < 1 || reduction < 1) throw ConfigError("csab: channels and reduction must be positive");
  Csab g;
  g.channels = channels;
  g.hidden = std::max<std::int64_t>(1, channels / reduction);
  g.mlp1_weight = init.kaiming({g.hidden, channels}, channels);
  g.mlp1_bias = init.zeros({g.hidden});
  g.mlp2_weight = init.kaiming({channels, g.hidden}, g.hidden);
  g.mlp2_bias = init.zeros({channels});
  g.spatial = Pointwise::make(init, 2, 1);
  g.slope = slope;
  return g;
}

Csab::Output Csab::forward(const Tensor& y) const {
  require_channels(y, channels, "csab");
  const std::int64_t n = y.dim(0);
  auto mlp = [&](const Tensor& pooled) {
    Tensor flat = reshape(pooled, {n, channels});
    return linear(leaky_relu(linear(flat, mlp1_weight, mlp1_bias), slope), mlp2_weight, mlp2_bias);
  };
  Tensor channel_logits = add(mlp(max_pool_global(y)), mlp(avg_pool_global(y)));
  Tensor channel_att = sigmoid(reshape(channel_logits, {n, channels, 1, 1, 1}));
  Tensor spatial_att = sigmoid(spatial.forward(concat({max_over_axis(y, 1), mean_over_axis(y, 1)}, 1)));
  Tensor refined = mul(mul(y, channel_att), spatial_att);
  return {refined, channel_att, spatial_att};
}

void Csab::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".mlp1.weight", mlp1_weight});
  out.push_back({prefix + ".mlp1.bias", mlp1_bias});
  out.push_back({prefix + ".mlp2.weight", mlp2_weight});
  out.push_back({prefix + ".mlp2.bias", mlp2_bias});
  spatial.collect(prefix + ".spatial", out);
}

}  // namespace glims
