#include <cstring>
#include <fstream>

#include "attpool/data.hpp"

namespace attpool {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path,
                      const char* field) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated header reading " + field);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_map(const std::string& path, const Tensor<float>& map) {
  if (map.rank() != 3)
    throw ShapeError("write_feature_map: shape " + map.shape_string() +
                     " is not [W,H,D]");
  if (!all_finite(map))
    throw ValueError("write_feature_map: non-finite value in " + path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_feature_map: cannot open " + path);
  f.write("AFM1", 4);
  put_u32(f, static_cast<std::uint32_t>(map.extent(0)));
  put_u32(f, static_cast<std::uint32_t>(map.extent(1)));
  put_u32(f, static_cast<std::uint32_t>(map.extent(2)));
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(map.data()),
          static_cast<std::streamsize>(map.numel() * 4));
  if (!f) throw DataError("write_feature_map: write failed for " + path);
}

Tensor<float> read_feature_map(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_feature_map: cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4))
    throw FormatError(path + ": truncated header reading magic");
  if (std::memcmp(magic, "AFM1", 4) != 0)
    throw FormatError(path + ": bad magic, not an AFM1 file");
  const std::uint32_t w = get_u32(f, path, "width");
  const std::uint32_t h = get_u32(f, path, "height");
  const std::uint32_t d = get_u32(f, path, "depth");
  if (w == 0 || h == 0 || d == 0)
    throw FormatError(path + ": zero dimension in header");

  const std::size_t n = std::size_t(w) * h * d;
  std::vector<float> data(n);
  if (!f.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(n * 4)))
    throw FormatError(path + ": payload shorter than header promises (" +
                      std::to_string(n) + " floats expected)");
  char extra;
  if (f.read(&extra, 1))
    throw FormatError(path + ": payload longer than header promises");

  Tensor<float> map({w, h, d}, std::move(data));
  if (!all_finite(map)) throw FormatError(path + ": non-finite payload value");
  return map;
}

}  // namespace attpool
