#include "sgdm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sgdm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(is.good(), ErrorKind::io, "truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  os.write("SGDM", 4);
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    check(name.size() <= 0xFFFF, ErrorKind::io, "tensor name too long");
    write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    check(t.ndim() <= 0xFF, ErrorKind::io, "tensor rank too large");
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.ndim()));
    for (int64_t d : t.shape()) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
    const auto data = t.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  check(os.good(), ErrorKind::io, "write failed for '" + path + "'");
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), ErrorKind::io, "cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "SGDM", 4) == 0, ErrorKind::io,
        "'" + path + "' is not an SGDM checkpoint");
  const uint32_t version = read_pod<uint32_t>(is, path);
  check(version == kCheckpointVersion, ErrorKind::io,
        "unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = read_pod<uint32_t>(is, path);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = read_pod<uint16_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    check(is.good(), ErrorKind::io, "truncated checkpoint: " + path);
    const uint8_t ndim = read_pod<uint8_t>(is, path);
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<uint32_t>(is, path);
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    check(is.good(), ErrorKind::io, "truncated checkpoint: " + path);
    check(out.find(name) == out.end(), ErrorKind::io,
          "duplicate tensor '" + name + "' in checkpoint");
    out.emplace(name, Tensor::from_data(shape, std::move(data)));
  }
  return out;
}

}  // namespace sgdm
