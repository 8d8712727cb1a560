#include "attpool/attention.hpp"

#include <fstream>
#include <vector>

#include "attpool/errors.hpp"

namespace attpool {

void write_pgm(const std::string& path, const Tensor<float>& map) {
  if (map.rank() != 2)
    throw ShapeError("write_pgm: map shape " + map.shape_string() +
                     " is not [W,H]");
  if (!all_finite(map)) throw ValueError("write_pgm: non-finite map value");
  const std::size_t w = map.extent(0), h = map.extent(1);

  float lo = map[0], hi = map[0];
  for (std::size_t i = 0; i < map.numel(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const float range = hi - lo;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_pgm: cannot open " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float v = range > 0 ? (map(x, y) - lo) / range : 0.0f;
      row[x] = static_cast<unsigned char>(v * 255.0f + 0.5f);
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(w));
  }
  if (!f) throw DataError("write_pgm: write failed for " + path);
}

}  // namespace attpool
