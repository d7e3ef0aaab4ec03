#include "mvoc/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvoc {

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  if (src.rank() != 3) throw std::invalid_argument("resize_bilinear: rank");
  const std::int64_t h = src.dim(0), w = src.dim(1), c = src.dim(2);
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
    double wy = fy - y0;
    std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, h - 1);
    std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, h - 1);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
      double wx = fx - x0;
      std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, w - 1);
      std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, w - 1);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double v00 = src[(y0c * w + x0c) * c + ch];
        double v01 = src[(y0c * w + x1c) * c + ch];
        double v10 = src[(y1c * w + x0c) * c + ch];
        double v11 = src[(y1c * w + x1c) * c + ch];
        out[(oy * out_w + ox) * c + ch] =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

Tensor avgpool2x(const Tensor& src) {
  if (src.rank() != 3 || src.dim(0) % 2 != 0 || src.dim(1) % 2 != 0)
    throw std::invalid_argument("avgpool2x: needs even [h, w, c]");
  const std::int64_t h = src.dim(0) / 2, w = src.dim(1) / 2, c = src.dim(2);
  Tensor out({h, w, c});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = src[((2 * y) * 2 * w + 2 * x) * c + ch] +
                   src[((2 * y) * 2 * w + 2 * x + 1) * c + ch] +
                   src[((2 * y + 1) * 2 * w + 2 * x) * c + ch] +
                   src[((2 * y + 1) * 2 * w + 2 * x + 1) * c + ch];
        out[(y * w + x) * c + ch] = 0.25 * s;
      }
  return out;
}

Tensor clip01(const Tensor& src) {
  Tensor out = src.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

}  // namespace mvoc
