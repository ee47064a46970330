#include "ldfuse/filters.hpp"

#include <algorithm>

namespace ldfuse {

void sobel_xy(std::span<const double> plane, int h, int w, std::span<double> gx,
              std::span<double> gy) {
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return plane[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double tl = at(y - 1, x - 1), tc = at(y - 1, x), tr = at(y - 1, x + 1);
      const double ml = at(y, x - 1), mr = at(y, x + 1);
      const double bl = at(y + 1, x - 1), bc = at(y + 1, x), br = at(y + 1, x + 1);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
      gy[i] = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
    }
  }
}

}  // namespace ldfuse
