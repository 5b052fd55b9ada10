#include "sgdm/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sgdm {

namespace {

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

void write_pnm(const std::string& path, const char* magic, int w, int h,
               const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  os << magic << "\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  check(os.good(), ErrorKind::io, "write failed for '" + path + "'");
}

struct PnmHeader {
  int w = 0;
  int h = 0;
};

PnmHeader read_pnm_header(std::istream& is, const char* magic,
                          const std::string& path) {
  std::string tag;
  is >> tag;
  check(is.good() && tag == magic, ErrorKind::io,
        "'" + path + "' is not a " + std::string(magic) + " file");
  // `#` comment lines are permitted between header fields.
  auto next_int = [&](int& out) {
    while (true) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        continue;
      }
      is >> out;
      check(is.good(), ErrorKind::io, "bad header in '" + path + "'");
      return;
    }
  };
  PnmHeader hd;
  int maxval = 0;
  next_int(hd.w);
  next_int(hd.h);
  next_int(maxval);
  check(hd.w > 0 && hd.h > 0, ErrorKind::io,
        "bad dimensions in '" + path + "'");
  check(maxval == 255, ErrorKind::io,
        "'" + path + "': only 8-bit maxval 255 is supported");
  is.get();  // single whitespace before the raster
  return hd;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  check(image.ndim() == 3 && image.dim(0) == 3, ErrorKind::dimension,
        "write_ppm expects a [3, H, W] tensor, got " + shape_str(image.shape()));
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const auto data = image.data();
  std::vector<uint8_t> bytes(static_cast<size_t>(3 * h * w));
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      bytes[static_cast<size_t>(3 * p + c)] = quantize(data[c * plane + p]);
    }
  }
  write_pnm(path, "P6", w, h, bytes);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), ErrorKind::io, "cannot open '" + path + "'");
  const PnmHeader hd = read_pnm_header(is, "P6", path);
  std::vector<uint8_t> bytes(static_cast<size_t>(3 * hd.w * hd.h));
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  check(is.good(), ErrorKind::io, "truncated raster in '" + path + "'");
  std::vector<float> data(bytes.size());
  const int64_t plane = static_cast<int64_t>(hd.w) * hd.h;
  for (int64_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      data[static_cast<size_t>(c * plane + p)] =
          static_cast<float>(bytes[static_cast<size_t>(3 * p + c)]) / 255.0f;
    }
  }
  return Tensor::from_data({3, hd.h, hd.w}, std::move(data));
}

void write_pgm(const std::string& path, const Tensor& gray) {
  check(gray.ndim() == 2, ErrorKind::dimension,
        "write_pgm expects a [H, W] tensor, got " + shape_str(gray.shape()));
  const int h = static_cast<int>(gray.dim(0));
  const int w = static_cast<int>(gray.dim(1));
  const auto data = gray.data();
  std::vector<uint8_t> bytes(static_cast<size_t>(h * w));
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(data[i]);
  write_pnm(path, "P5", w, h, bytes);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), ErrorKind::io, "cannot open '" + path + "'");
  const PnmHeader hd = read_pnm_header(is, "P5", path);
  std::vector<uint8_t> bytes(static_cast<size_t>(hd.w * hd.h));
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  check(is.good(), ErrorKind::io, "truncated raster in '" + path + "'");
  std::vector<float> data(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    data[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return Tensor::from_data({hd.h, hd.w}, std::move(data));
}

}  // namespace sgdm
