#pragma once

#include <span>

namespace ldfuse {

// 3x3 Sobel responses of one H x W plane with replicate border.
//   gx kernel: [-1 0 1; -2 0 2; -1 0 1]
//   gy kernel: [-1 -2 -1; 0 0 0; 1 2 1]
void sobel_xy(std::span<const double> plane, int h, int w, std::span<double> gx,
              std::span<double> gy);

}  // namespace ldfuse
