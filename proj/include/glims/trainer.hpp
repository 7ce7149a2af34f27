#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glims/loss.hpp"
#include "glims/metrics.hpp"
#include "glims/model.hpp"
#include "glims/optim.hpp"
#include "glims/phantom.hpp"

#include "json.hpp"

namespace glims {

struct TrainOptions {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 2;
  /// Stop after this many optimizer steps (0: no limit).
  std::int64_t max_steps = 0;
  double lr_min = 0.0;
  AdamWOptions adamw;
  LossOptions loss;
  double flip_probability = 0.5;
  double overlap = 0.8;
  std::int64_t validate_every = 1;
  std::uint64_t seed = 0;
  /// Checkpoint and metrics log directory; empty disables both.
  std::filesystem::path out_dir;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  std::int64_t steps = 0;
  double lr = 0;
  double loss = 0;
  double dice_term = 0;
  double ce_term = 0;
  /// Present on validation epochs; mean foreground DSC in [0, 1].
  std::optional<double> val_mean_dsc;
  std::optional<MetricsReport> val_report;
  bool improved = false;
  double seconds = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_dsc = -1;
  std::int64_t best_epoch = -1;
  std::int64_t steps = 0;
};

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Random-patch training with deep supervision, cosine-annealed AdamW and
/// best-checkpoint retention. Validation uses sliding-window inference on
/// dataset.validation, or on the training cases when there is no validation
/// split. Throws NumericError on a non-finite loss.
TrainResult train(GlimsModel& model, const Dataset& dataset, const TrainOptions& options,
                  const EpochCallback& on_epoch = {});

/// Sliding-window evaluation of cases; mean_dsc_percent of the average report.
MetricsReport evaluate_cases(const GlimsModel& model, const std::vector<DatasetCase>& cases, double overlap);

}  // namespace glims
