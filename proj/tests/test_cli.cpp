#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "glims/volume.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace glims;

namespace {

const fs::path root = fs::temp_directory_path() / "glims_test_cli";

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path log = root / "last_output.txt";
  const std::string cmd = std::string(GLIMS_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream text;
  text << in.rdbuf();
  if (output) *output = text.str();
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kTinyConfig = R"([model]
in_channels = 2
num_classes = 3
base_channels = 4
num_levels = 3
cnn_levels = 2
transformer_depths = 2
bottleneck_depth = 2
patch_size = 16
deep_supervision_levels = 3

[train]
epochs = 1
batch_size = 2

[data]
extent = 16, 16, 16
channels = 2
num_classes = 3
cases = 2
)";

struct Scratch {
  Scratch() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Scratch, "generate is reproducible from the seed") {
  REQUIRE(run("generate --seed 7 --cases 2 --out-dir " + (root / "a").string()) == 0);
  REQUIRE(run("generate --seed 7 --cases 2 --out-dir " + (root / "b").string()) == 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(root / "b" / fs::relative(e.path(), root / "a")));
  }
  CHECK(files == 5);
  REQUIRE(run("generate --seed 8 --cases 2 --out-dir " + (root / "c").string()) == 0);
  CHECK(slurp(root / "a/train/case_000_label.glv") != slurp(root / "c/train/case_000_label.glv"));
}

TEST_CASE_FIXTURE(Scratch, "ground truth scored against itself is perfect") {
  REQUIRE(run("generate --seed 3 --cases 3 --out-dir " + (root / "data").string()) == 0);
  fs::create_directories(root / "pred");
  for (const auto& split : {"train", "val"})
    for (const auto& e : fs::directory_iterator(root / "data" / split)) {
      std::string name = e.path().filename().string();
      if (!name.ends_with("_label.glv")) continue;
      name.replace(name.size() - 10, 10, "_pred.glv");
      fs::copy_file(e.path(), root / "pred" / name);
    }
  REQUIRE(run("eval --data " + (root / "data").string() + " --predictions " + (root / "pred").string() +
              " --out-dir " + (root / "eval").string()) == 0);
  const auto j = nlohmann::json::parse(slurp(root / "eval/metrics.json"));
  CHECK(j["mean_dsc_percent"].get<double>() == 100.0);
  for (const auto& c : j["classes"]) {
    CHECK(c["dsc_percent"].get<double>() == 100.0);
    if (c["hd95_defined"].get<bool>()) CHECK(c["hd95"].get<double>() == 0.0);
  }
  CHECK(j["cases"].size() == 3);
}

TEST_CASE_FIXTURE(Scratch, "train, infer and eval on a tiny configuration") {
  write_text(root / "tiny.ini", kTinyConfig);
  const std::string cfg = " --config " + (root / "tiny.ini").string();
  std::string out;
  REQUIRE(run("train" + cfg + " --seed 1 --out-dir " + (root / "run").string(), &out) == 0);
  CHECK(fs::exists(root / "run/best.ckpt"));
  CHECK(fs::exists(root / "run/best.ckpt.bin"));
  CHECK(fs::exists(root / "run/config.ini"));
  std::ifstream log(root / "run/metrics.jsonl");
  std::string line;
  int records = 0;
  while (std::getline(log, line)) records += !line.empty();
  CHECK(records == 1);

  REQUIRE(run("generate" + cfg + " --seed 1 --out-dir " + (root / "data").string()) == 0);
  REQUIRE(run("infer --checkpoint " + (root / "run/best.ckpt").string() + " --input " + (root / "data").string() +
              " --out-dir " + (root / "pred").string(), &out) == 0);
  const LabelVolume pred = read_labels(root / "pred/case_000_pred.glv");
  CHECK(pred.extent == Extent{16, 16, 16});
  for (auto id : pred.ids) CHECK(id < 3);

  REQUIRE(run("eval --checkpoint " + (root / "run/best.ckpt").string() + " --data " + (root / "data").string() +
              " --out-dir " + (root / "eval").string()) == 0);
  CHECK(fs::exists(root / "eval/metrics.json"));
  // The checkpoint refuses a different architecture.
  CHECK(run("eval --preset reduced --config " + (root / "tiny.ini").string() + " --patch-size 32 --checkpoint " +
            (root / "run/best.ckpt").string() + " --data " + (root / "data").string()) == 1);
}

TEST_CASE_FIXTURE(Scratch, "exit codes distinguish configuration, numeric and io failures") {
  std::string out;
  CHECK(run("params", &out) == 0);
  CHECK(out.find("47.16M") != std::string::npos);
  CHECK(run("params --config " + (root / "missing.ini").string()) == 3);
  write_text(root / "bad.ini", "[model]\npatch_size = 33\n");
  CHECK(run("params --config " + (root / "bad.ini").string()) == 1);
  write_text(root / "typo.ini", "[model]\npatch_sise = 32\n");
  CHECK(run("params --config " + (root / "typo.ini").string()) == 1);
  CHECK(run("train --epochs three --out-dir " + root.string()) == 1);
  CHECK(run("bogus") == 1);
  CHECK(run("eval --data " + (root / "nowhere").string() + " --predictions " + root.string()) == 3);

  write_text(root / "tiny.ini", kTinyConfig);
  REQUIRE(run("generate --config " + (root / "tiny.ini").string() + " --out-dir " + (root / "nan").string()) == 0);
  const fs::path image = root / "nan/train/case_000_image.glv";
  Volume v = read_volume(image);
  for (float& x : v.data) x = std::numeric_limits<float>::quiet_NaN();
  write_volume(image, v);
  CHECK(run("train --config " + (root / "tiny.ini").string() + " --data " + (root / "nan").string() + " --out-dir " +
            (root / "nan_run").string(), &out) == 2);
  CHECK(out.find("non-finite loss") != std::string::npos);
}
