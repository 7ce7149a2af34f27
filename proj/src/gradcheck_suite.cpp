#include <chrono>
#include <random>

#include "glims/blocks.hpp"
#include "glims/gradcheck.hpp"
#include "glims/loss.hpp"
#include "glims/model.hpp"
#include "glims/ops.hpp"
#include "glims/swin3d.hpp"

namespace glims {
namespace {

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed), seed_(seed) {}

  Tensor random(const Shape& shape, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = u(rng_);
    return Tensor::from_values(shape, v, DType::f64);
  }

  // Jitters every parameter so zero biases and unit gains are not special.
  std::vector<Tensor> jittered(const ParamList& params) {
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    std::vector<Tensor> out;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      double* d = t.mutable_data<double>();
      for (std::int64_t i = 0; i < p.tensor.numel(); ++i) d[i] += u(rng_);
      out.push_back(p.tensor);
    }
    return out;
  }

  void run(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs,
           double tolerance = 1e-4, std::int64_t max_coords = 48) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckOptions opt;
    opt.tolerance = tolerance;
    opt.max_coords = max_coords;
    opt.seed = seed_ + cases_.size();
    GradcheckCase c;
    c.name = name;
    c.tolerance = tolerance;
    c.result = gradcheck(f, std::move(inputs), opt);
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cases_.push_back(std::move(c));
  }

  std::vector<GradcheckCase> take() { return std::move(cases_); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::vector<GradcheckCase> cases_;
};

void op_cases(Suite& s) {
  const Tensor none;
  {
    Tensor a = s.random({2, 3, 1}), b = s.random({1, 4});
    s.run("add", [=] { return add(a, b); }, {a, b});
    s.run("sub", [=] { return sub(a, b); }, {a, b});
    s.run("mul", [=] { return mul(a, b); }, {a, b});
  }
  {
    Tensor x = s.random({4}), pos = s.random({4}, 0.5, 2.0);
    Tensor away = Tensor::from_values({4}, {-0.8, -0.2, 0.3, 0.9}, DType::f64);
    s.run("scale", [=] { return scale(x, -1.7); }, {x});
    s.run("add_scalar", [=] { return add_scalar(x, 0.3); }, {x});
    s.run("sigmoid", [=] { return sigmoid(x); }, {x});
    s.run("leaky_relu", [=] { return leaky_relu(away, 0.01); }, {away});
    s.run("gelu", [=] { return gelu(x); }, {x});
    s.run("exp", [=] { return glims::exp(x); }, {x});
    s.run("log", [=] { return glims::log(pos); }, {pos});
    s.run("reciprocal", [=] { return reciprocal(pos); }, {pos});
  }
  {
    Tensor x = s.random({2, 3, 4});
    static const int axes[] = {0, 2};
    s.run("softmax", [=] { return softmax(x, 1); }, {x});
    s.run("sum", [=] { return sum(x); }, {x});
    s.run("sum_axes", [=] { return sum(x, axes, true); }, {x});
    s.run("mean", [=] { return mean(x, axes, false); }, {x});
    s.run("amax", [=] { return amax(x, axes, true); }, {x});
    s.run("max_over_axis", [=] { return max_over_axis(x, 1); }, {x});
    s.run("mean_over_axis", [=] { return mean_over_axis(x, 1); }, {x});
    Tensor v = s.random({1, 2, 2, 1, 2});
    s.run("max_pool_global", [=] { return max_pool_global(v); }, {v});
    s.run("avg_pool_global", [=] { return avg_pool_global(v); }, {v});
  }
  {
    Tensor a = s.random({2, 2}), b = s.random({2, 1}), x = s.random({2, 4}), p = s.random({2, 3, 2});
    s.run("concat", [=] { return concat({a, b}, 1); }, {a, b});
    s.run("split", [=] {
      const std::int64_t sizes[] = {1, 3};
      return split(x, 1, sizes)[1];
    }, {x});
    s.run("slice", [=] { return slice(x, 1, 1, 2); }, {x});
    s.run("reshape", [=] { return reshape(x, {4, 2}); }, {x});
    s.run("permute", [=] { return permute(p, {2, 0, 1}); }, {p});
    s.run("roll", [=] {
      const std::int64_t shifts[] = {1, -1, 1};
      return roll(p, shifts);
    }, {p});
    s.run("pad", [=] {
      const std::pair<std::int64_t, std::int64_t> widths[] = {{1, 0}, {0, 2}, {1, 1}};
      return pad(p, widths);
    }, {p});
    s.run("crop", [=] {
      const std::int64_t starts[] = {1, 0, 1}, extents[] = {1, 2, 1};
      return crop(p, starts, extents);
    }, {p});
    Tensor u = s.random({1, 1, 1, 2, 2});
    s.run("upsample_nearest2", [=] { return upsample_nearest2(u); }, {u});
  }
  {
    Tensor a = s.random({2, 3}), b = s.random({3, 2}), at = s.random({3, 2}), bt = s.random({2, 3});
    s.run("matmul", [=] { return matmul(a, b); }, {a, b});
    s.run("matmul_tt", [=] { return matmul(at, bt, true, true); }, {at, bt});
    Tensor x = s.random({2, 3}), w = s.random({2, 3}), bias = s.random({2});
    s.run("linear", [=] { return linear(x, w, bias); }, {x, w, bias});
  }
  {
    Tensor x = s.random({1, 2, 3, 3, 3}), w = s.random({2, 2, 3, 3, 3}), b = s.random({2});
    s.run("conv3d", [=] { return conv3d(x, w, b, {.padding = 1}); }, {x, w, b});
    Tensor wd = s.random({2, 1, 3, 3, 3});
    s.run("conv3d_dilated_depthwise", [=] {
      return conv3d(x, wd, none, {.dilation = 2, .padding = 2, .groups = 2});
    }, {x, wd});
    Tensor xs = s.random({1, 2, 4, 4, 4}), ws = s.random({3, 2, 2, 2, 2}), bs = s.random({3});
    s.run("conv3d_strided", [=] { return conv3d(xs, ws, bs, {.stride = 2}); }, {xs, ws, bs});
    Tensor xt = s.random({1, 2, 2, 2, 2}), wt = s.random({2, 3, 2, 2, 2}), bt = s.random({3});
    s.run("conv3d_transpose", [=] { return conv3d_transpose(xt, wt, bt); }, {xt, wt, bt});
  }
  {
    Tensor x = s.random({1, 2, 2, 2, 1});
    s.run("instance_norm", [=] { return instance_norm(x); }, {x});
    Tensor t = s.random({3, 4}), g = s.random({4}), b = s.random({4});
    s.run("layer_norm", [=] { return layer_norm(t, g, b); }, {t, g, b});
  }
}

template <class Block>
std::vector<Tensor> with_params(Suite& s, const Block& block, std::vector<Tensor> inputs) {
  ParamList params;
  block.collect("b", params);
  for (auto& t : s.jittered(params)) inputs.push_back(t);
  return inputs;
}

void block_cases(Suite& s) {
  Initializer init(s.seed(), DType::f64);
  const std::vector<std::int64_t> dil{1, 2, 3};
  {
    const Dacb b = Dacb::make(init, 2, dil);
    Tensor x = s.random({1, 2, 4, 4, 4});
    s.run("dacb", [=] { return b.forward(x); }, with_params(s, b, {x}));
  }
  {
    const Dmsf b = Dmsf::make(init, 2, dil);
    Tensor x = s.random({1, 2, 4, 4, 4});
    s.run("dmsf", [=] {
      const auto o = b.forward(x);
      return concat({reshape(o.skip, {-1}), reshape(o.down, {-1})}, 0);
    }, with_params(s, b, {x}));
  }
  {
    const Dmsu b = Dmsu::make(init, 2, dil);
    Tensor x = s.random({1, 4, 2, 2, 2}), skip = s.random({1, 2, 4, 4, 4});
    s.run("dmsu", [=] { return b.forward(x, skip); }, with_params(s, b, {x, skip}));
  }
  {
    const Csab b = Csab::make(init, 4, 2);
    Tensor y = s.random({1, 4, 2, 3, 2});
    s.run("csab", [=] { return b.forward(y).refined; }, with_params(s, b, {y}));
  }
  {
    const WindowAttention a = WindowAttention::make(init, 4, 2);
    const Extent3 grid{4, 4, 4}, win{2, 2, 2};
    const Tensor mask = shifted_window_mask(grid, win, shift_for(win), DType::f64);
    Tensor tokens = s.random({1, 8, 4});
    s.run("w_msa", [=] { return a.forward(tokens, Tensor()); }, with_params(s, a, {tokens}));
    Tensor shifted = s.random({8, 8, 4});
    s.run("sw_msa", [=] { return a.forward(shifted, mask); }, with_params(s, a, {shifted}));
  }
  {
    const SwinStage st = SwinStage::make(init, 4, {4, 4, 4}, 2, 2, 4.0, 2);
    Tensor x = s.random({1, 4, 4, 4, 4});
    s.run("swin_pair", [=] { return st.forward(x); }, with_params(s, st, {x}));
  }
  {
    const PatchMerge m = PatchMerge::make(init, 3);
    Tensor x = s.random({1, 2, 4, 2, 3});
    s.run("patch_merge", [=] { return m.forward(x); }, with_params(s, m, {x}));
    const PatchExpand e = PatchExpand::make(init, 4);
    Tensor y = s.random({1, 2, 1, 2, 4});
    s.run("patch_expand", [=] { return e.forward(y); }, with_params(s, e, {y}));
  }
  {
    LabelMap labels{{1, 2, 3, 2}, {0, 1, 2, 2, 1, 0, 0, 0, 1, 2, 1, 1}};
    Tensor logits = s.random({1, 3, 2, 3, 2}, -2, 2);
    s.run("dice_ce_loss", [=] { return dice_ce_loss(logits, labels).loss; }, {logits});
  }
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.in_channels = 2;
  c.num_classes = 3;
  c.base_channels = 4;
  c.num_levels = 3;
  c.cnn_levels = 2;
  c.transformer_depths = {2};
  c.bottleneck_depth = 2;
  c.patch_size = 16;
  c.deep_supervision_levels = 3;
  return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed, bool include_model) {
  Suite s(seed);
  op_cases(s);
  block_cases(s);
  if (include_model) {
    const ModelConfig cfg = gradcheck_model_config();
    const GlimsModel model = GlimsModel::build(cfg, seed, DType::f64);
    std::vector<Tensor> inputs{s.random({1, cfg.in_channels, 16, 16, 16})};
    for (auto& t : s.jittered(model.parameters())) inputs.push_back(t);
    std::mt19937_64 rng(seed);
    LabelMap labels{{1, 16, 16, 16}, std::vector<std::uint8_t>(16 * 16 * 16)};
    std::uniform_int_distribution<int> cls(0, static_cast<int>(cfg.num_classes) - 1);
    for (auto& v : labels.ids) v = static_cast<std::uint8_t>(cls(rng));
    const Tensor x = inputs.front();
    s.run("model_end_to_end", [=] {
      const ForwardOutput out = model.forward(x);
      std::vector<Tensor> levels{out.logits};
      levels.insert(levels.end(), out.aux.begin(), out.aux.end());
      LossReport report;
      return deep_supervision_loss(levels, labels, report);
    }, inputs, 1e-3, 3);
  }
  return s.take();
}

}  // namespace glims
