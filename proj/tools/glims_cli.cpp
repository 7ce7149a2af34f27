// glims: dataset generation, training, evaluation, inference, parameter
// reporting and gradient checks from one binary.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "glims/checkpoint.hpp"
#include "glims/config.hpp"
#include "glims/gradcheck.hpp"
#include "glims/inference.hpp"
#include "glims/kernels.hpp"
#include "glims/metrics.hpp"
#include "glims/model.hpp"
#include "glims/phantom.hpp"
#include "glims/trainer.hpp"
#include "glims/volume.hpp"

namespace fs = std::filesystem;
using namespace glims;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

constexpr double kPublishedParams = 47.16e6;
constexpr double kPublishedFlops = 72.30e9;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::optional<std::int64_t> patch_size;
  std::optional<double> overlap;
  std::string out_dir;
  std::string checkpoint;
  std::optional<int> threads;
  std::string data;
  std::string input;
  std::string predictions;
  std::optional<std::int64_t> cases;
  std::optional<std::int64_t> max_steps;
  std::string preset;
  bool skip_model = false;
};

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (f.preset == "reduced") c.model = ModelConfig::reduced();
  std::string config = f.config;
  // eval and infer fall back to the config stored next to the checkpoint.
  if (config.empty() && !f.checkpoint.empty()) {
    const fs::path beside = fs::path(f.checkpoint).parent_path() / "config.ini";
    if (fs::exists(beside)) config = beside.string();
  }
  if (!config.empty()) c = load_run_config(config, c);
  if (f.seed) {
    c.train.seed = *f.seed;
    c.data.seed = *f.seed;
  }
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.max_steps) c.train.max_steps = *f.max_steps;
  if (f.patch_size) c.model.patch_size = *f.patch_size;
  if (f.overlap) c.train.overlap = *f.overlap;
  if (f.cases) c.dataset_cases = *f.cases;
  if (f.threads) c.threads = *f.threads;
  if (c.threads > 0) set_num_threads(c.threads);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path require_out_dir(const Flags& f) {
  if (f.out_dir.empty()) throw ConfigError("--out-dir is required");
  fs::create_directories(f.out_dir);
  return f.out_dir;
}

GlimsModel load_model(const RunConfig& c, const Flags& f) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  c.model.validate();
  GlimsModel m = GlimsModel::build(c.model, c.init_seed);
  load_checkpoint(f.checkpoint, m, nullptr);
  return m;
}

Dataset load_or_generate(const RunConfig& c, const Flags& f) {
  if (!f.data.empty()) return read_dataset(f.data);
  return make_phantom_dataset(c.data, c.dataset_cases, c.train_fraction);
}

std::vector<DatasetCase> all_cases(const Dataset& ds) {
  std::vector<DatasetCase> v = ds.train;
  v.insert(v.end(), ds.validation.begin(), ds.validation.end());
  return v;
}

int cmd_generate(const Flags& f) {
  const RunConfig c = resolve(f);
  const fs::path out = require_out_dir(f);
  write_dataset(out, make_phantom_dataset(c.data, c.dataset_cases, c.train_fraction));
  std::printf("wrote %lld cases to %s\n", static_cast<long long>(c.dataset_cases), out.c_str());
  return kOk;
}

int cmd_train(const Flags& f) {
  RunConfig c = resolve(f);
  c.model.validate();
  const fs::path out = require_out_dir(f);
  c.train.out_dir = out;
  write_text(out / "config.ini", to_ini(c));
  const Dataset ds = load_or_generate(c, f);
  GlimsModel m = GlimsModel::build(c.model, c.init_seed);
  if (!f.checkpoint.empty()) load_checkpoint(f.checkpoint, m, nullptr);
  std::printf("training %lld parameters on %zu cases (%zu validation)\n",
              static_cast<long long>(m.count_parameters()), ds.train.size(), ds.validation.size());
  const TrainResult r = train(m, ds, c.train, [](const EpochRecord& e) {
    std::printf("epoch %4lld  steps %5lld  lr %.3e  loss %.4f", static_cast<long long>(e.epoch),
                static_cast<long long>(e.steps), e.lr, e.loss);
    if (e.val_mean_dsc) std::printf("  val dsc %.4f%s", *e.val_mean_dsc, e.improved ? " *" : "");
    std::printf("  %.1fs\n", e.seconds);
    std::fflush(stdout);
    return true;
  });
  std::printf("best mean dsc %.4f at epoch %lld after %lld steps\n", r.best_dsc, static_cast<long long>(r.best_epoch),
              static_cast<long long>(r.steps));
  return kOk;
}

int cmd_eval(const Flags& f) {
  const RunConfig c = resolve(f);
  const Dataset ds = load_or_generate(c, f);
  const auto cases = all_cases(ds);
  std::vector<MetricsReport> reports;
  std::optional<GlimsModel> model;
  if (f.predictions.empty()) model = load_model(c, f);
  for (const auto& kase : cases) {
    std::vector<std::uint8_t> pred;
    if (model) {
      pred = argmax_labels(sliding_window_infer(*model, kase.image.to_tensor(model->dtype()), c.train.overlap));
    } else {
      pred = read_labels(fs::path(f.predictions) / (kase.name + "_pred.glv")).ids;
      if (pred.size() != kase.labels.ids.size()) throw ShapeError("prediction size differs for " + kase.name);
    }
    const auto& s = kase.labels.spacing;
    reports.push_back(evaluate_labels(pred, kase.labels.ids, kase.labels.extent,
                                      static_cast<int>(c.model.num_classes), {s[0], s[1], s[2]}));
  }
  const MetricsReport avg = average_reports(reports);
  std::cout << avg.to_text();
  if (!f.out_dir.empty()) {
    nlohmann::json j = avg.to_json();
    j["cases"] = nlohmann::json::array();
    for (std::size_t i = 0; i < cases.size(); ++i)
      j["cases"].push_back({{"name", cases[i].name}, {"report", reports[i].to_json()}});
    write_text(require_out_dir(f) / "metrics.json", j.dump(2) + "\n");
  }
  return kOk;
}

int cmd_infer(const Flags& f) {
  const RunConfig c = resolve(f);
  const GlimsModel m = load_model(c, f);
  const fs::path out = require_out_dir(f);
  std::vector<fs::path> inputs;
  if (f.input.empty()) throw ConfigError("--input is required");
  if (fs::is_directory(f.input)) {
    for (const auto& e : fs::recursive_directory_iterator(f.input))
      if (e.is_regular_file() && e.path().filename().string().ends_with("_image.glv")) inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(f.input);
  }
  for (const auto& in : inputs) {
    const Volume v = read_volume(in);
    LabelVolume pred{v.extent, v.spacing, argmax_labels(sliding_window_infer(m, v.to_tensor(m.dtype()), c.train.overlap))};
    std::string stem = in.stem().string();
    if (stem.ends_with("_image")) stem.resize(stem.size() - 6);
    write_labels(out / (stem + "_pred.glv"), pred);
    std::printf("%s -> %s\n", in.c_str(), (out / (stem + "_pred.glv")).c_str());
  }
  return kOk;
}

int cmd_params(const Flags& f) {
  const RunConfig c = resolve(f);
  c.model.validate();
  const GlimsModel m = GlimsModel::build(c.model, 0);
  const double count = static_cast<double>(m.count_parameters());
  const double flops = static_cast<double>(estimate_flops(c.model, c.model.patch_size));
  std::printf("parameters: %lld (%.2fM)\n", static_cast<long long>(m.count_parameters()), count / 1e6);
  for (const auto& [name, n] : parameter_breakdown(m.parameters()))
    std::printf("  %-16s %12lld\n", name.c_str(), static_cast<long long>(n));
  std::printf("reference: %.2fM, ratio %.4f (%+.2f%%)\n", kPublishedParams / 1e6, count / kPublishedParams,
              100.0 * (count / kPublishedParams - 1.0));
  std::printf("forward flops at %lld^3: %.2fG (reference %.2fG)\n", static_cast<long long>(c.model.patch_size),
              flops / 1e9, kPublishedFlops / 1e9);
  std::printf("reconstruction: DACB fusion 3C->2C->C, heads = C/%lld, mlp ratio %.1f, CSAB reduction %lld, "
              "%lld convolutional levels\n",
              static_cast<long long>(c.model.head_dim), c.model.mlp_ratio,
              static_cast<long long>(c.model.csab_reduction), static_cast<long long>(c.model.cnn_levels));
  return kOk;
}

int cmd_gradcheck(const Flags& f) {
  resolve(f);
  const auto cases = run_gradcheck_suite(f.seed.value_or(7), !f.skip_model);
  bool ok = true;
  for (const auto& k : cases) {
    const bool pass = k.result.passed && k.result.max_rel_error < k.tolerance;
    ok = ok && pass;
    std::printf("%-4s %-28s max rel err %.3e (tol %.0e, %lld coords) %s\n", pass ? "ok" : "FAIL", k.name.c_str(),
                k.result.max_rel_error, k.tolerance, static_cast<long long>(k.result.coords_checked),
                k.result.worst.c_str());
  }
  std::printf("%zu cases, %s\n", cases.size(), ok ? "all passed" : "FAILURES");
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLIMS volumetric segmentation: data, training, evaluation and checks"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "INI run configuration");
    s->add_option("--seed", f.seed, "Seed for data generation and training");
    s->add_option("--device-threads", f.threads, "OpenMP threads (0: default)");
  };
  auto model_flags = [&](CLI::App* s) {
    s->add_option("--preset", f.preset, "Base model before the config file")->check(CLI::IsMember({"full", "reduced"}));
    s->add_option("--patch-size", f.patch_size, "Patch extent");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic phantom dataset tree");
  common(gen);
  gen->add_option("--cases", f.cases, "Number of phantoms");
  gen->add_option("--out-dir", f.out_dir, "Destination directory")->required();

  auto* tr = app.add_subcommand("train", "Train and keep the best checkpoint");
  common(tr);
  model_flags(tr);
  tr->add_option("--data", f.data, "Dataset directory (default: generate from [data])");
  tr->add_option("--cases", f.cases, "Phantoms to generate when --data is absent");
  tr->add_option("--epochs", f.epochs, "Training epochs");
  tr->add_option("--max-steps", f.max_steps, "Stop after this many optimizer steps");
  tr->add_option("--overlap", f.overlap, "Sliding-window overlap for validation");
  tr->add_option("--checkpoint", f.checkpoint, "Initial weights");
  tr->add_option("--out-dir", f.out_dir, "Checkpoint, log and config directory")->required();

  auto* ev = app.add_subcommand("eval", "Score a checkpoint or saved predictions against labels");
  common(ev);
  model_flags(ev);
  ev->add_option("--data", f.data, "Dataset directory (default: generate from [data])");
  ev->add_option("--cases", f.cases, "Phantoms to generate when --data is absent");
  ev->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
  ev->add_option("--predictions", f.predictions, "Directory of <case>_pred.glv label volumes");
  ev->add_option("--overlap", f.overlap, "Sliding-window overlap");
  ev->add_option("--out-dir", f.out_dir, "Where to write metrics.json");

  auto* inf = app.add_subcommand("infer", "Write predicted label volumes");
  common(inf);
  model_flags(inf);
  inf->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->required();
  inf->add_option("--input", f.input, "Volume file or directory of *_image.glv")->required();
  inf->add_option("--overlap", f.overlap, "Sliding-window overlap");
  inf->add_option("--out-dir", f.out_dir, "Destination directory")->required();

  auto* par = app.add_subcommand("params", "Parameter count and FLOPs estimate");
  common(par);
  model_flags(par);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  common(gc);
  gc->add_flag("--skip-model", f.skip_model, "Leave out the end-to-end model case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(f);
    if (tr->parsed()) return cmd_train(f);
    if (ev->parsed()) return cmd_eval(f);
    if (inf->parsed()) return cmd_infer(f);
    if (par->parsed()) return cmd_params(f);
    if (gc->parsed()) return cmd_gradcheck(f);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
