#include "glims/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace glims {
namespace {

constexpr char kMagic[6] = {'G', 'L', 'V', 'O', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
enum : std::uint8_t { kF32 = 0, kU8 = 1 };

struct Header {
  std::uint32_t channels = 1;
  Extent extent{1, 1, 1};
  Spacing spacing{1, 1, 1};
  std::uint8_t dtype = kF32;

  std::uint64_t payload_bytes() const {
    return static_cast<std::uint64_t>(channels) * static_cast<std::uint64_t>(extent[0] * extent[1] * extent[2]) *
           (dtype == kF32 ? 4u : 1u);
  }
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string encode_header(const Header& h) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, h.channels);
  for (auto e : h.extent) put_u32(out, static_cast<std::uint32_t>(e));
  for (auto s : h.spacing) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
  out.push_back(static_cast<char>(h.dtype));
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Parses and checks the header; returns it with the payload view.
Header decode(const std::filesystem::path& path, const std::string& bytes, std::uint8_t expected_dtype) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw BadMagicError(path.string() + ": bad magic, not a GLVOL1 file");
  if (bytes.size() < kVolumeHeaderBytes) throw TruncatedPayloadError(path.string() + ": header truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_u32(p + 6);
  if (version != kVersion)
    throw VersionMismatchError(path.string() + ": version " + std::to_string(version) + ", expected " +
                               std::to_string(kVersion));
  Header h;
  h.channels = get_u32(p + 10);
  for (int a = 0; a < 3; ++a) h.extent[static_cast<std::size_t>(a)] = get_u32(p + 14 + 4 * a);
  for (int a = 0; a < 3; ++a) h.spacing[static_cast<std::size_t>(a)] = std::bit_cast<float>(get_u32(p + 26 + 4 * a));
  h.dtype = p[38];
  if (h.dtype != expected_dtype)
    throw PayloadSizeError(path.string() + ": payload dtype " + std::to_string(h.dtype) + ", expected " +
                           std::to_string(expected_dtype));
  const std::uint64_t have = bytes.size() - kVolumeHeaderBytes;
  if (have < h.payload_bytes())
    throw TruncatedPayloadError(path.string() + ": payload shorter than header promise (" + std::to_string(have) +
                                " of " + std::to_string(h.payload_bytes()) + " bytes)");
  if (have > h.payload_bytes())
    throw PayloadSizeError(path.string() + ": payload of " + std::to_string(have) +
                           " bytes disagrees with header extents (" + std::to_string(h.payload_bytes()) + ")");
  return h;
}

void check_geometry(const Extent& e, const Spacing& s, const char* what) {
  for (auto v : e)
    if (v < 1) throw ShapeError(std::string(what) + ": extents must be >= 1");
  for (auto v : s)
    if (!(v > 0)) throw ConfigError(std::string(what) + ": spacing must be positive");
}

}  // namespace

void Volume::validate() const {
  check_geometry(extent, spacing, "volume");
  if (channels < 1) throw ShapeError("volume: channels must be >= 1");
  if (static_cast<std::int64_t>(data.size()) != channels * voxels())
    throw ShapeError("volume: data length " + std::to_string(data.size()) + " != channels * voxels " +
                     std::to_string(channels * voxels()));
}

Tensor Volume::to_tensor(DType dt) const {
  validate();
  std::vector<double> v(data.begin(), data.end());
  return Tensor::from_values({1, channels, extent[0], extent[1], extent[2]}, v, dt);
}

void LabelVolume::validate(int num_classes) const {
  check_geometry(extent, spacing, "labels");
  if (static_cast<std::int64_t>(ids.size()) != voxels()) throw ShapeError("labels: id count does not match extents");
  for (auto id : ids)
    if (id >= num_classes)
      throw ConfigError("labels: id " + std::to_string(id) + " out of range for " + std::to_string(num_classes) +
                        " classes");
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  v.validate();
  std::string bytes = encode_header({static_cast<std::uint32_t>(v.channels), v.extent, v.spacing, kF32});
  bytes.reserve(bytes.size() + v.data.size() * 4);
  for (float f : v.data) put_u32(bytes, std::bit_cast<std::uint32_t>(f));
  write_file(path, bytes);
}

Volume read_volume(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const Header h = decode(path, bytes, kF32);
  Volume v;
  v.channels = h.channels;
  v.extent = h.extent;
  v.spacing = h.spacing;
  v.data.resize(static_cast<std::size_t>(v.channels * v.voxels()));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kVolumeHeaderBytes;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  v.validate();
  return v;
}

void write_labels(const std::filesystem::path& path, const LabelVolume& l) {
  check_geometry(l.extent, l.spacing, "labels");
  if (static_cast<std::int64_t>(l.ids.size()) != l.voxels()) throw ShapeError("labels: id count does not match extents");
  std::string bytes = encode_header({1, l.extent, l.spacing, kU8});
  bytes.append(reinterpret_cast<const char*>(l.ids.data()), l.ids.size());
  write_file(path, bytes);
}

LabelVolume read_labels(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const Header h = decode(path, bytes, kU8);
  if (h.channels != 1) throw PayloadSizeError(path.string() + ": label files have one channel");
  LabelVolume l;
  l.extent = h.extent;
  l.spacing = h.spacing;
  l.ids.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kVolumeHeaderBytes), bytes.end());
  return l;
}

Patch sample_patch(const Volume& image, const LabelVolume& labels, std::int64_t size, std::mt19937_64& rng) {
  if (size < 1) throw ConfigError("sample_patch: size must be >= 1");
  if (image.extent != labels.extent) throw ShapeError("sample_patch: image and label extents differ");
  const Extent& e = image.extent;
  auto mirror = [](std::int64_t i, std::int64_t n) {
    if (n == 1) return std::int64_t{0};
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  Patch p;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t room = std::max<std::int64_t>(e[static_cast<std::size_t>(a)], size) - size;
    p.corner[static_cast<std::size_t>(a)] = std::uniform_int_distribution<std::int64_t>(0, room)(rng);
  }
  p.image.channels = image.channels;
  p.image.extent = {size, size, size};
  p.image.spacing = image.spacing;
  p.image.data.resize(static_cast<std::size_t>(image.channels * size * size * size));
  p.labels.extent = p.image.extent;
  p.labels.spacing = labels.spacing;
  p.labels.ids.resize(static_cast<std::size_t>(size * size * size));
  for (std::int64_t z = 0; z < size; ++z)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        const std::int64_t sz = mirror(p.corner[0] + z, e[0]), sy = mirror(p.corner[1] + y, e[1]),
                           sx = mirror(p.corner[2] + x, e[2]);
        const std::int64_t src = (sz * e[1] + sy) * e[2] + sx;
        const std::int64_t dst = (z * size + y) * size + x;
        p.labels.ids[static_cast<std::size_t>(dst)] = labels.ids[static_cast<std::size_t>(src)];
        for (std::int64_t c = 0; c < image.channels; ++c)
          p.image.data[static_cast<std::size_t>(c * size * size * size + dst)] =
              image.data[static_cast<std::size_t>(c * image.voxels() + src)];
      }
  return p;
}

void flip_patch(Patch& p, const std::array<bool, 3>& axes) {
  if (!axes[0] && !axes[1] && !axes[2]) return;
  const Extent e = p.labels.extent;
  const std::int64_t n = e[0] * e[1] * e[2];
  auto target = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    if (axes[0]) z = e[0] - 1 - z;
    if (axes[1]) y = e[1] - 1 - y;
    if (axes[2]) x = e[2] - 1 - x;
    return (z * e[1] + y) * e[2] + x;
  };
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  for (std::int64_t z = 0; z < e[0]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[2]; ++x) map[static_cast<std::size_t>((z * e[1] + y) * e[2] + x)] = target(z, y, x);
  const auto ids = p.labels.ids;
  for (std::int64_t i = 0; i < n; ++i) p.labels.ids[static_cast<std::size_t>(map[static_cast<std::size_t>(i)])] = ids[static_cast<std::size_t>(i)];
  const auto data = p.image.data;
  for (std::int64_t c = 0; c < p.image.channels; ++c)
    for (std::int64_t i = 0; i < n; ++i)
      p.image.data[static_cast<std::size_t>(c * n + map[static_cast<std::size_t>(i)])] = data[static_cast<std::size_t>(c * n + i)];
}

}  // namespace glims
