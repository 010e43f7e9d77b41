#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pagg/common.hpp"

namespace pagg {

// 8-bit grayscale raster, row-major.
struct Image {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> px;

  Image() = default;
  Image(int64_t h_, int64_t w_, uint8_t fill = 0) : h(h_), w(w_), px(size_t(h_ * w_), fill) {}

  uint8_t& at(int64_t y, int64_t x) { return px[size_t(y * w + x)]; }
  uint8_t at(int64_t y, int64_t x) const { return px[size_t(y * w + x)]; }
  double aspect_ratio() const { return double(w) / double(h); }
  bool operator==(const Image& o) const { return h == o.h && w == o.w && px == o.px; }
};

void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);
Image read_png(const std::string& path);

// Dispatch on extension (.pgm / .png); anything else is an error.
Image read_image(const std::string& path);

// Bilinear resample with pixel-center alignment.
Image bilinear_resize(const Image& img, int64_t out_h, int64_t out_w);

// 3x3 homography mapping (x,y,1) -> (x',y',1) up to scale, row-major.
using Homography = std::array<double, 9>;

// Solve the homography sending each src corner to its dst corner.
Homography homography_from_corners(const std::array<std::array<double, 2>, 4>& src,
                                   const std::array<std::array<double, 2>, 4>& dst);

// Inverse-sample through the dst->src homography, clamping at the border.
Image warp_perspective(const Image& img, const Homography& dst_to_src);

}  // namespace pagg
