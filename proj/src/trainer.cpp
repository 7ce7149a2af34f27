#include "glims/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "glims/autograd.hpp"
#include "glims/checkpoint.hpp"
#include "glims/inference.hpp"
#include "glims/volume.hpp"

namespace glims {
namespace {

struct Batch {
  Tensor image;
  LabelMap labels;
  std::vector<std::string> names;
};

Batch make_batch(const std::vector<DatasetCase>& cases, std::span<const std::size_t> picks, std::int64_t patch,
                 std::int64_t channels, double flip_p, std::mt19937_64& rng, DType dt) {
  Batch b;
  const auto B = static_cast<std::int64_t>(picks.size());
  const std::int64_t n = patch * patch * patch;
  std::vector<double> img(static_cast<std::size_t>(B * channels * n));
  b.labels.shape = {B, patch, patch, patch};
  b.labels.ids.resize(static_cast<std::size_t>(B * n));
  std::bernoulli_distribution flip(flip_p);
  for (std::int64_t i = 0; i < B; ++i) {
    const DatasetCase& c = cases[picks[static_cast<std::size_t>(i)]];
    if (c.image.channels != channels)
      throw ShapeError("case " + c.name + " has " + std::to_string(c.image.channels) + " channels, model expects " +
                       std::to_string(channels));
    Patch p = sample_patch(c.image, c.labels, patch, rng);
    const std::array<bool, 3> axes{flip(rng), flip(rng), flip(rng)};
    flip_patch(p, axes);
    std::copy(p.image.data.begin(), p.image.data.end(), img.begin() + i * channels * n);
    std::copy(p.labels.ids.begin(), p.labels.ids.end(), b.labels.ids.begin() + i * n);
    b.names.push_back(c.name);
  }
  b.image = Tensor::from_values({B, channels, patch, patch, patch}, img, dt);
  return b;
}

std::string describe_batch(const Batch& b) {
  std::string s;
  for (const auto& n : b.names) s += (s.empty() ? "" : ",") + n;
  return s;
}

}  // namespace

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"steps", steps},           {"lr", lr}, {"loss", loss},
                   {"dice_term", dice_term}, {"ce_term", ce_term}, {"improved", improved}, {"seconds", seconds}};
  j["val_mean_dsc"] = val_mean_dsc ? nlohmann::json(*val_mean_dsc) : nlohmann::json(nullptr);
  if (val_report) j["val"] = val_report->to_json();
  return j;
}

MetricsReport evaluate_cases(const GlimsModel& model, const std::vector<DatasetCase>& cases, double overlap) {
  std::vector<MetricsReport> reports;
  for (const auto& c : cases) {
    const Tensor logits = sliding_window_infer(model, c.image.to_tensor(model.dtype()), overlap);
    const auto pred = argmax_labels(logits);
    reports.push_back(evaluate_labels(pred, c.labels.ids, c.labels.extent,
                                      static_cast<int>(model.config().num_classes), c.labels.spacing));
  }
  return average_reports(reports);
}

TrainResult train(GlimsModel& model, const Dataset& dataset, const TrainOptions& options,
                  const EpochCallback& on_epoch) {
  const ModelConfig& cfg = model.config();
  if (dataset.train.empty()) throw ConfigError("train: dataset has no training cases");
  if (options.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (options.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  for (const auto& c : dataset.train) c.labels.validate(static_cast<int>(cfg.num_classes));

  AdamW optimizer(model.parameters(), options.adamw);
  std::mt19937_64 rng(options.seed);
  const auto& val_cases = dataset.validation.empty() ? dataset.train : dataset.validation;
  const std::int64_t ds_levels = cfg.deep_supervision_levels;

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.jsonl");
    if (!log) throw IoError("cannot open " + (options.out_dir / "metrics.jsonl").string());
  }

  TrainResult result;
  std::vector<std::size_t> order(dataset.train.size());
  for (std::int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(options.epochs), options.adamw.lr_max,
                       options.lr_min);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::int64_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(options.batch_size)) {
      if (options.max_steps > 0 && result.steps >= options.max_steps) break;
      const std::size_t count = std::min(order.size() - first, static_cast<std::size_t>(options.batch_size));
      const Batch batch = make_batch(dataset.train, std::span(order).subspan(first, count), cfg.patch_size,
                                     cfg.in_channels, options.flip_probability, rng, model.dtype());
      const ForwardOutput out = model.forward(batch.image);
      std::vector<Tensor> levels{out.logits};
      for (std::int64_t i = 0; i + 1 < ds_levels && i < static_cast<std::int64_t>(out.aux.size()); ++i)
        levels.push_back(out.aux[static_cast<std::size_t>(i)]);
      LossReport report;
      const Tensor loss = deep_supervision_loss(levels, batch.labels, report, options.loss);
      if (!std::isfinite(report.total)) {
        current_tape().clear();
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << result.steps << " on batch [" << describe_batch(batch)
           << "]";
        throw NumericError(os.str());
      }
      backward(loss);
      optimizer.step(rec.lr);
      optimizer.zero_grad();
      ++result.steps;
      ++batches;
      rec.loss += report.total;
      rec.dice_term += report.dice_term;
      rec.ce_term += report.ce_term;
    }
    if (batches > 0) {
      rec.loss /= static_cast<double>(batches);
      rec.dice_term /= static_cast<double>(batches);
      rec.ce_term /= static_cast<double>(batches);
    }
    rec.steps = result.steps;
    const bool last = epoch + 1 == options.epochs || (options.max_steps > 0 && result.steps >= options.max_steps);
    if (options.validate_every > 0 && ((epoch + 1) % options.validate_every == 0 || last)) {
      MetricsReport r = evaluate_cases(model, val_cases, options.overlap);
      rec.val_mean_dsc = r.mean_dsc_percent / 100.0;
      rec.val_report = std::move(r);
      if (*rec.val_mean_dsc > result.best_dsc) {
        rec.improved = true;
        result.best_dsc = *rec.val_mean_dsc;
        result.best_epoch = epoch;
        if (!options.out_dir.empty()) {
          CheckpointHeader h;
          h.epoch = epoch;
          h.best_dsc = result.best_dsc;
          std::ostringstream state;
          state << rng;
          h.rng_state = state.str();
          save_checkpoint(options.out_dir / "best.ckpt", model, &optimizer, h);
        }
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log.is_open()) log << rec.to_json().dump() << "\n" << std::flush;
    result.log.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
    if (last) break;
  }
  return result;
}

}  // namespace glims
