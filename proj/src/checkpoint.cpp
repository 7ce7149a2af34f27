#include "glims/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace glims {
namespace {

constexpr const char* kMagic = "glims-checkpoint";
constexpr int kVersion = 1;

std::filesystem::path blob_path(const std::filesystem::path& p) { return p.string() + ".bin"; }

void append_f32(std::string& out, const Tensor& t) {
  const auto values = t.to_vector();
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) out[start + 4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
}

void read_f32(const std::string& blob, std::uint64_t offset, Tensor& t, const std::string& name) {
  const auto n = static_cast<std::uint64_t>(t.numel());
  if (offset + 4 * n > blob.size()) throw IoError("checkpoint blob too short for '" + name + "'");
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * i + static_cast<std::uint64_t>(b)])) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  t.copy_from(Tensor::from_values(t.shape(), values, t.dtype()));
}

struct Entry {
  Shape shape;
  std::uint64_t offset = 0;
};

struct Manifest {
  CheckpointHeader header;
  std::map<std::string, Entry> entries;
};

Manifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint manifest " + path.string());
  Manifest m;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty checkpoint manifest " + path.string());
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kMagic) throw IoError("not a checkpoint manifest: " + path.string());
    if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "epoch") {
      ls >> m.header.epoch;
    } else if (key == "best_dsc") {
      ls >> m.header.best_dsc;
    } else if (key == "config_fingerprint") {
      ls >> std::hex >> m.header.config_fingerprint;
    } else if (key == "optimizer_steps") {
      ls >> m.header.optimizer_steps;
    } else if (key == "rng_state") {
      std::getline(ls >> std::ws, m.header.rng_state);
    } else if (key == "tensor") {
      std::string name, dtype, dims;
      Entry e;
      ls >> name >> dtype >> dims >> e.offset;
      if (dtype != "f32") throw IoError("checkpoint tensor '" + name + "' has unsupported dtype " + dtype);
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x'))
        if (!d.empty() && d != "scalar") e.shape.push_back(std::stoll(d));
      m.entries[name] = e;
    }
    if (ls.fail() && key != "rng_state") throw IoError("malformed checkpoint line: " + line);
  }
  return m;
}

std::string dims_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GlimsModel& model, const AdamW* optimizer,
                     CheckpointHeader header) {
  header.config_fingerprint = model.config().fingerprint();
  if (optimizer) header.optimizer_steps = optimizer->steps();
  std::ostringstream manifest;
  manifest << kMagic << " " << kVersion << "\n";
  manifest << "epoch " << header.epoch << "\n";
  manifest.precision(17);
  manifest << "best_dsc " << header.best_dsc << "\n";
  manifest << "config_fingerprint " << std::hex << header.config_fingerprint << std::dec << "\n";
  manifest << "optimizer_steps " << header.optimizer_steps << "\n";
  manifest << "rng_state " << header.rng_state << "\n";
  manifest << "config " << model.config().canonical() << "\n";

  std::string blob;
  auto add = [&](const std::string& name, const Tensor& t) {
    manifest << "tensor " << name << " f32 " << dims_str(t.shape()) << " " << blob.size() << "\n";
    append_f32(blob, t);
  };
  for (const auto& p : model.parameters()) add(p.name, p.tensor);
  if (optimizer) {
    for (std::size_t i = 0; i < optimizer->params().size(); ++i) {
      add("adam.m." + optimizer->params()[i].name, optimizer->first_moments()[i]);
      add("adam.v." + optimizer->params()[i].name, optimizer->second_moments()[i]);
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write both files beside their targets, then rename, so a crash never
  // leaves a manifest pointing at a half-written blob.
  const auto tmp_blob = std::filesystem::path(blob_path(path).string() + ".tmp");
  const auto tmp_manifest = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp_blob, std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("failed writing " + tmp_blob.string());
  }
  {
    std::ofstream out(tmp_manifest);
    out << manifest.str();
    if (!out) throw IoError("failed writing " + tmp_manifest.string());
  }
  std::filesystem::rename(tmp_blob, blob_path(path));
  std::filesystem::rename(tmp_manifest, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return parse_manifest(path).header; }

CheckpointHeader load_checkpoint(const std::filesystem::path& path, GlimsModel& model, AdamW* optimizer) {
  const Manifest m = parse_manifest(path);
  if (m.header.config_fingerprint != model.config().fingerprint()) {
    std::ostringstream os;
    os << "checkpoint " << path.string() << " was written for a different configuration (fingerprint " << std::hex
       << m.header.config_fingerprint << ", model " << model.config().fingerprint() << ")";
    throw ConfigError(os.str());
  }
  std::ifstream in(blob_path(path), std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint blob " + blob_path(path).string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto restore = [&](const std::string& name, Tensor t) {
    const auto it = m.entries.find(name);
    if (it == m.entries.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != t.shape())
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", model expects " +
                    shape_str(t.shape()));
    read_f32(blob, it->second.offset, t, name);
  };
  for (const auto& p : model.parameters()) restore(p.name, p.tensor);
  if (optimizer) {
    for (std::size_t i = 0; i < optimizer->params().size(); ++i) {
      restore("adam.m." + optimizer->params()[i].name, optimizer->first_moments()[i]);
      restore("adam.v." + optimizer->params()[i].name, optimizer->second_moments()[i]);
    }
    optimizer->set_steps(m.header.optimizer_steps);
  }
  return m.header;
}

}  // namespace glims
