#include "glims/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "glims/ops.hpp"

namespace glims {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::reduced() {
  ModelConfig c;
  c.base_channels = 8;
  c.num_levels = 4;
  c.cnn_levels = 2;
  c.transformer_depths = {2, 2};
  c.bottleneck_depth = 2;
  c.patch_size = 32;
  return c;
}

std::int64_t ModelConfig::heads(std::int64_t ch) const { return std::max<std::int64_t>(1, ch / head_dim); }

std::int64_t ModelConfig::depth(std::int64_t level) const {
  return transformer_depths.at(static_cast<std::size_t>(level - cnn_levels));
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> v;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) v.push_back(what);
  };
  need(in_channels >= 1, "in_channels must be >= 1");
  need(num_classes >= 2, "num_classes must be >= 2");
  need(base_channels >= 1, "base_channels must be >= 1");
  need(num_levels >= 1 && num_levels <= 8, "num_levels must be in [1, 8]");
  need(cnn_levels >= 0 && cnn_levels <= num_levels, "cnn_levels must be in [0, num_levels]");
  need(static_cast<std::int64_t>(transformer_depths.size()) == num_levels - cnn_levels,
       "transformer_depths needs one entry per transformer level (num_levels - cnn_levels = " +
           std::to_string(num_levels - cnn_levels) + ")");
  for (auto d : transformer_depths) need(d >= 2 && d % 2 == 0, "transformer depths must be even and >= 2");
  need(bottleneck_depth >= 0 && bottleneck_depth % 2 == 0, "bottleneck_depth must be even (0 = convolutional)");
  need(!dilations.empty(), "dilations must not be empty");
  for (auto d : dilations) need(d >= 1, "dilations must be >= 1");
  need(window >= 1, "window must be >= 1");
  need(mlp_ratio > 0, "mlp_ratio must be positive");
  need(head_dim >= 1, "head_dim must be >= 1");
  need(csab_reduction >= 1, "csab_reduction must be >= 1");
  need(deep_supervision_levels >= 1 && deep_supervision_levels <= std::max<std::int64_t>(1, num_levels),
       "deep_supervision_levels must be in [1, num_levels]");
  need(leaky_slope >= 0 && leaky_slope < 1, "leaky_slope must be in [0, 1)");
  if (num_levels >= 1 && num_levels <= 8) {
    need(patch_size >= 1 && patch_size % (std::int64_t{1} << num_levels) == 0,
         "patch size not divisible by 2^num_levels = " + std::to_string(std::int64_t{1} << num_levels));
    for (std::int64_t l = cnn_levels; l <= num_levels; ++l) {
      const bool swin = l < num_levels || bottleneck_depth > 0;
      if (!swin || l < 0) continue;
      const std::int64_t c = channels(l);
      need(c % heads(c) == 0, "channels " + std::to_string(c) + " not divisible by " + std::to_string(heads(c)) + " heads");
    }
  }
  return v;
}

void ModelConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model configuration:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  auto list = [&](const std::vector<std::int64_t>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "in_channels=" << in_channels << ";num_classes=" << num_classes << ";base_channels=" << base_channels
     << ";num_levels=" << num_levels << ";cnn_levels=" << cnn_levels << ";transformer_depths=";
  list(transformer_depths);
  os << ";bottleneck_depth=" << bottleneck_depth << ";dilations=";
  list(dilations);
  os << ";window=" << window << ";mlp_ratio=" << mlp_ratio << ";head_dim=" << head_dim
     << ";csab_reduction=" << csab_reduction << ";patch_size=" << patch_size
     << ";deep_supervision_levels=" << deep_supervision_levels << ";leaky_slope=" << leaky_slope;
  return os.str();
}

std::uint64_t ModelConfig::fingerprint() const {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

GlimsModel GlimsModel::build(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  GlimsModel m;
  m.config_ = config;
  m.dtype_ = dtype;
  Initializer init(seed, dtype);
  const auto& c = config;
  const double slope = c.leaky_slope;
  auto grid = [&](std::int64_t level) { return Extent3{c.extent(level), c.extent(level), c.extent(level)}; };

  m.stem_ = Pointwise::make(init, c.in_channels, c.base_channels);
  for (std::int64_t l = 0; l < c.num_levels; ++l) {
    EncoderLevel e;
    const std::int64_t ch = c.channels(l);
    if (c.is_transformer_level(l)) {
      e.swin = SwinStage::make(init, ch, grid(l), c.depth(l), c.heads(ch), c.mlp_ratio, c.window);
      e.merge = PatchMerge::make(init, ch);
    } else {
      e.cnn = Dmsf::make(init, ch, c.dilations, slope);
    }
    m.encoder_.push_back(std::move(e));
  }
  const std::int64_t bc = c.channels(c.num_levels);
  if (c.bottleneck_depth > 0) {
    m.bottleneck_swin_ = SwinStage::make(init, bc, grid(c.num_levels), c.bottleneck_depth, c.heads(bc), c.mlp_ratio,
                                         c.window);
  } else {
    m.bottleneck_first_ = Dacb::make(init, bc, c.dilations, slope);
    m.bottleneck_second_ = Dacb::make(init, bc, c.dilations, slope);
  }
  for (std::int64_t l = 0; l < c.num_levels; ++l) m.csab_.push_back(Csab::make(init, c.channels(l), c.csab_reduction, slope));
  m.decoder_.resize(static_cast<std::size_t>(c.num_levels));
  for (std::int64_t l = c.num_levels - 1; l >= 0; --l) {
    DecoderLevel& d = m.decoder_[static_cast<std::size_t>(l)];
    const std::int64_t ch = c.channels(l);
    if (c.is_transformer_level(l)) {
      d.expand = PatchExpand::make(init, 2 * ch);
      d.fuse_weight = init.trunc_normal({ch, 2 * ch});
      d.fuse_bias = init.zeros({ch});
      d.swin = SwinStage::make(init, ch, grid(l), c.depth(l), c.heads(ch), c.mlp_ratio, c.window);
    } else {
      d.cnn = Dmsu::make(init, ch, c.dilations, slope);
    }
  }
  m.head_ = Pointwise::make(init, c.base_channels, c.num_classes);
  for (std::int64_t l = 1; l < c.deep_supervision_levels; ++l)
    m.aux_heads_.push_back(Pointwise::make(init, c.channels(l), c.num_classes));

  ParamList& p = m.params_;
  m.stem_.collect("stem", p);
  for (std::int64_t l = 0; l < c.num_levels; ++l) {
    const std::string pre = "encoder." + std::to_string(l);
    const auto& e = m.encoder_[static_cast<std::size_t>(l)];
    if (c.is_transformer_level(l)) {
      e.swin.collect(pre + ".swin", p);
      e.merge.collect(pre + ".merge", p);
    } else {
      e.cnn.collect(pre + ".dmsf", p);
    }
  }
  if (c.bottleneck_depth > 0) {
    m.bottleneck_swin_.collect("bottleneck.swin", p);
  } else {
    m.bottleneck_first_.collect("bottleneck.dacb0", p);
    m.bottleneck_second_.collect("bottleneck.dacb1", p);
  }
  for (std::int64_t l = 0; l < c.num_levels; ++l) m.csab_[static_cast<std::size_t>(l)].collect("csab." + std::to_string(l), p);
  for (std::int64_t l = c.num_levels - 1; l >= 0; --l) {
    const std::string pre = "decoder." + std::to_string(l);
    const auto& d = m.decoder_[static_cast<std::size_t>(l)];
    if (c.is_transformer_level(l)) {
      d.expand.collect(pre + ".expand", p);
      p.push_back({pre + ".fuse.weight", d.fuse_weight});
      p.push_back({pre + ".fuse.bias", d.fuse_bias});
      d.swin.collect(pre + ".swin", p);
    } else {
      d.cnn.collect(pre + ".dmsu", p);
    }
  }
  m.head_.collect("head", p);
  for (std::size_t i = 0; i < m.aux_heads_.size(); ++i) m.aux_heads_[i].collect("aux_head." + std::to_string(i + 1), p);
  return m;
}

std::int64_t GlimsModel::count_parameters() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

ForwardOutput GlimsModel::forward(const Tensor& x) const {
  const auto& c = config_;
  if (x.rank() != 5 || x.dim(1) != c.in_channels)
    throw ShapeError("forward: expected [N, " + std::to_string(c.in_channels) + ", P, P, P], got " +
                     shape_str(x.shape()));
  for (int a = 2; a < 5; ++a)
    if (x.dim(a) != c.patch_size)
      throw ShapeError("forward: spatial axis " + std::to_string(a) + " has extent " + std::to_string(x.dim(a)) +
                       " but the patch size is " + std::to_string(c.patch_size));
  if (x.dtype() != dtype_)
    throw ShapeError(std::string("forward: input dtype ") + dtype_name(x.dtype()) + " differs from model dtype " +
                     dtype_name(dtype_));

  // h is channels-first unless channels_last is set.
  Tensor h = stem_.forward(x);
  bool channels_last = false;
  auto as_first = [&](const Tensor& t) { return channels_last ? to_channels_first(t) : t; };
  auto as_last = [&](const Tensor& t) { return channels_last ? t : to_channels_last(t); };

  std::vector<Tensor> skips;
  for (std::int64_t l = 0; l < c.num_levels; ++l) {
    const auto& e = encoder_[static_cast<std::size_t>(l)];
    if (c.is_transformer_level(l)) {
      Tensor t = e.swin.forward(as_last(h));
      skips.push_back(to_channels_first(t));
      h = e.merge.forward(t);
      channels_last = true;
    } else {
      auto out = e.cnn.forward(as_first(h));
      skips.push_back(out.skip);
      h = out.down;
      channels_last = false;
    }
  }
  if (c.bottleneck_depth > 0) {
    h = bottleneck_swin_.forward(as_last(h));
    channels_last = true;
  } else {
    h = bottleneck_second_.forward(bottleneck_first_.forward(as_first(h)));
    channels_last = false;
  }

  ForwardOutput out;
  out.aux.resize(aux_heads_.size());
  out.channel_attention.resize(static_cast<std::size_t>(c.num_levels));
  out.spatial_attention.resize(static_cast<std::size_t>(c.num_levels));
  for (std::int64_t l = c.num_levels - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const auto gate = csab_[li].forward(skips[li]);
    out.channel_attention[li] = gate.channel_attention;
    out.spatial_attention[li] = gate.spatial_attention;
    const auto& d = decoder_[li];
    if (c.is_transformer_level(l)) {
      Tensor up = d.expand.forward(as_last(h));
      Tensor fused = linear(concat({up, to_channels_last(gate.refined)}, 4), d.fuse_weight, d.fuse_bias);
      h = d.swin.forward(fused);
      channels_last = true;
    } else {
      h = d.cnn.forward(as_first(h), gate.refined);
      channels_last = false;
    }
    if (l >= 1 && l < c.deep_supervision_levels) out.aux[li - 1] = aux_heads_[li - 1].forward(as_first(h));
  }
  out.logits = head_.forward(as_first(h));
  return out;
}

std::vector<std::pair<std::string, std::int64_t>> parameter_breakdown(const ParamList& params) {
  std::vector<std::pair<std::string, std::int64_t>> groups;
  for (const auto& p : params) {
    std::string key = p.name;
    const auto first = key.find('.');
    const std::string head = key.substr(0, first);
    if (head == "encoder" || head == "decoder" || head == "csab" || head == "aux_head") {
      const auto second = key.find('.', first + 1);
      key = key.substr(0, second);
    } else {
      key = head;
    }
    if (groups.empty() || groups.back().first != key) groups.emplace_back(key, 0);
    groups.back().second += p.tensor.numel();
  }
  return groups;
}

std::int64_t estimate_flops(const ModelConfig& c, std::int64_t extent, std::int64_t batch) {
  c.validate();
  double flops = 0;
  auto vox = [&](std::int64_t level) {
    const double e = static_cast<double>(extent >> level);
    return static_cast<double>(batch) * e * e * e;
  };
  const auto ndil = static_cast<double>(c.dilations.size());
  auto dacb = [&](std::int64_t level, double ch) {
    const double v = vox(level);
    return 2 * v * (ndil * ch * 27 + ndil * ch * 2 * ch + 2 * ch * ch);
  };
  auto swin_stage = [&](std::int64_t level, double ch, std::int64_t depth) {
    const std::int64_t e = extent >> level;
    const std::int64_t m = std::min(c.window, e);
    const std::int64_t padded = (e + m - 1) / m * m;
    const double tokens = vox(level);
    const double padded_tokens = static_cast<double>(batch) * std::pow(static_cast<double>(padded), 3);
    const double l = std::pow(static_cast<double>(m), 3);
    const double hidden = std::round(c.mlp_ratio * ch);
    const double per_block = 2 * padded_tokens * (3 * ch * ch + ch * ch) + 4 * padded_tokens * l * ch +
                             2 * tokens * 2 * ch * hidden;
    return per_block * static_cast<double>(depth);
  };
  auto csab = [&](std::int64_t level, double ch) {
    const double hidden = std::max<double>(1, std::floor(ch / static_cast<double>(c.csab_reduction)));
    return 2 * 2 * static_cast<double>(batch) * 2 * ch * hidden + 2 * vox(level) * 2 + 2 * vox(level) * ch;
  };

  flops += 2 * vox(0) * static_cast<double>(c.in_channels * c.base_channels);
  for (std::int64_t l = 0; l < c.num_levels; ++l) {
    const auto ch = static_cast<double>(c.channels(l));
    if (c.is_transformer_level(l)) {
      flops += swin_stage(l, ch, c.depth(l));
      flops += 2 * vox(l + 1) * 8 * ch * 2 * ch;
    } else {
      flops += 2 * dacb(l, ch);
      flops += 2 * vox(l + 1) * 2 * ch * ch * 8;
    }
  }
  const auto bc = static_cast<double>(c.channels(c.num_levels));
  flops += c.bottleneck_depth > 0 ? swin_stage(c.num_levels, bc, c.bottleneck_depth) : 2 * dacb(c.num_levels, bc);
  for (std::int64_t l = c.num_levels - 1; l >= 0; --l) {
    const auto ch = static_cast<double>(c.channels(l));
    flops += csab(l, ch);
    if (c.is_transformer_level(l)) {
      flops += 2 * vox(l + 1) * 2 * ch * 8 * ch;
      flops += 2 * vox(l) * 2 * ch * ch;
      flops += swin_stage(l, ch, c.depth(l));
    } else {
      flops += 2 * vox(l + 1) * 2 * ch * ch * 8;
      flops += 2 * vox(l) * 2 * ch * ch;
      flops += 2 * dacb(l, ch);
    }
    if (l >= 1 && l < c.deep_supervision_levels) flops += 2 * vox(l) * ch * static_cast<double>(c.num_classes);
  }
  flops += 2 * vox(0) * static_cast<double>(c.base_channels * c.num_classes);
  return static_cast<std::int64_t>(flops);
}

}  // namespace glims
