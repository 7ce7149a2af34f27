#include "glims/loss.hpp"

#include <cmath>
#include <string>

#include "glims/ops.hpp"

namespace glims {

LabelMap downsample_labels(const LabelMap& labels, std::int64_t factor) {
  if (factor < 1) throw ConfigError("downsample_labels: factor must be >= 1");
  if (labels.shape.size() != 4) throw ShapeError("labels must be [N, D, H, W], got " + shape_str(labels.shape));
  if (factor == 1) return labels;
  const std::int64_t n = labels.shape[0], d = labels.shape[1], h = labels.shape[2], w = labels.shape[3];
  for (std::int64_t e : {d, h, w})
    if (e % factor != 0)
      throw ShapeError("downsample_labels: extent " + std::to_string(e) + " not divisible by " + std::to_string(factor));
  LabelMap out;
  out.shape = {n, d / factor, h / factor, w / factor};
  out.ids.resize(static_cast<std::size_t>(out.voxels()));
  const std::int64_t o = (factor - 1) / 2;
  std::size_t k = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t z = 0; z < d / factor; ++z)
      for (std::int64_t y = 0; y < h / factor; ++y)
        for (std::int64_t x = 0; x < w / factor; ++x)
          out.ids[k++] = labels.ids[static_cast<std::size_t>(
              ((b * d + z * factor + o) * h + y * factor + o) * w + x * factor + o)];
  return out;
}

Tensor one_hot(const LabelMap& labels, std::int64_t num_classes, DType dtype) {
  if (labels.shape.size() != 4) throw ShapeError("labels must be [N, D, H, W], got " + shape_str(labels.shape));
  const std::int64_t n = labels.shape[0];
  const std::int64_t plane = labels.voxels() / std::max<std::int64_t>(n, 1);
  Tensor y = Tensor::zeros({n, num_classes, labels.shape[1], labels.shape[2], labels.shape[3]}, dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    T* p = y.mutable_data<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < plane; ++i) {
        const std::int64_t k = labels.ids[static_cast<std::size_t>(b * plane + i)];
        if (k >= num_classes)
          throw ConfigError("label " + std::to_string(k) + " out of range for " + std::to_string(num_classes) +
                            " classes");
        p[(b * num_classes + k) * plane + i] = T(1);
      }
  });
  return y;
}

LossValue dice_ce_loss(const Tensor& logits, const LabelMap& labels, const LossOptions& opt) {
  if (logits.rank() != 5) throw ShapeError("dice_ce_loss: logits must be [N, K, D, H, W], got " + shape_str(logits.shape()));
  const Shape expected{logits.dim(0), logits.dim(2), logits.dim(3), logits.dim(4)};
  if (labels.shape != expected)
    throw ShapeError("dice_ce_loss: labels " + shape_str(labels.shape) + " do not match logits " +
                     shape_str(logits.shape()));
  const std::int64_t k = logits.dim(1);
  Tensor y = one_hot(labels, k, logits.dtype());
  Tensor p = softmax(logits, 1);

  const int axes[] = {0, 2, 3, 4};
  Tensor intersect = sum(mul(y, p), axes, false);  // [K]
  Tensor y_sq = sum(y, axes, false);               // y is 0/1
  Tensor denom = add_scalar(add(sum(mul(p, p), axes, false), y_sq), opt.eps);
  Tensor ratio_sum = sum(mul(intersect, reciprocal(denom)));
  Tensor dice = add_scalar(scale(ratio_sum, -2.0 / static_cast<double>(k)), 1.0);

  LossValue v;
  v.dice = dice.item();
  if (opt.dice_only) {
    v.loss = dice;
    return v;
  }
  const double norm = opt.normalize_ce ? static_cast<double>(labels.voxels()) : 1.0;
  // log((p + eps) / (1 + eps)) keeps the term non-negative at p = 1.
  Tensor log_p = add_scalar(glims::log(add_scalar(p, opt.eps)), -std::log1p(opt.eps));
  Tensor ce = scale(sum(mul(y, log_p)), -1.0 / norm);
  v.ce = ce.item();
  v.loss = add(dice, ce);
  return v;
}

std::vector<double> deep_supervision_weights(std::size_t levels) {
  std::vector<double> w(levels);
  for (std::size_t i = 0; i < levels; ++i) w[i] = std::ldexp(1.0, -static_cast<int>(i));
  return w;
}

double weighted_total(std::span<const double> per_level) {
  const auto w = deep_supervision_weights(per_level.size());
  double t = 0;
  for (std::size_t i = 0; i < w.size(); ++i) t += w[i] * per_level[i];
  return t;
}

Tensor deep_supervision_loss(std::span<const Tensor> levels, const LabelMap& labels, LossReport& report,
                             const LossOptions& opt) {
  if (levels.empty()) throw ShapeError("deep_supervision_loss: no output levels");
  if (labels.shape.size() != 4) throw ShapeError("labels must be [N, D, H, W], got " + shape_str(labels.shape));
  const auto weights = deep_supervision_weights(levels.size());
  report = LossReport{};
  Tensor total;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::int64_t factor = std::int64_t{1} << i;
    const Tensor& lg = levels[i];
    if (lg.rank() != 5)
      throw ShapeError("deep_supervision_loss: level " + std::to_string(i) + " is not [N, K, D, H, W]");
    for (int a = 0; a < 3; ++a)
      if (lg.dim(2 + a) * factor != labels.shape[static_cast<std::size_t>(1 + a)])
        throw ShapeError("deep_supervision_loss: level " + std::to_string(i) + " has shape " +
                         shape_str(lg.shape()) + ", expected labels " + shape_str(labels.shape) + " / " +
                         std::to_string(factor));
    const LossValue lv = dice_ce_loss(lg, downsample_labels(labels, factor), opt);
    const double l = lv.loss.item();
    report.per_level.push_back(l);
    report.dice_term += weights[i] * lv.dice;
    report.ce_term += weights[i] * lv.ce;
    report.total += weights[i] * l;
    Tensor term = weights[i] == 1.0 ? lv.loss : scale(lv.loss, weights[i]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace glims
