#include "pagg/image.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace pagg {

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_pgm: cannot open " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.px.data()), std::streamsize(img.px.size()));
  check(f.good(), "write_pgm: write failed for " + path);
}

namespace {

int pgm_token(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  check(c != EOF, "read_pgm: truncated header");
  int64_t value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return int(value);
}

}  // namespace

Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_pgm: cannot open " + path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  check(magic[0] == 'P' && magic[1] == '5', "read_pgm: " + path + " is not a binary PGM (P5)");
  const int w = pgm_token(f);
  const int h = pgm_token(f);
  const int maxval = pgm_token(f);
  check(w > 0 && h > 0, "read_pgm: bad dimensions in " + path);
  check(maxval > 0 && maxval <= 255, "read_pgm: unsupported maxval in " + path);
  Image img(h, w);
  f.read(reinterpret_cast<char*>(img.px.data()), std::streamsize(img.px.size()));
  check(f.gcount() == std::streamsize(img.px.size()), "read_pgm: truncated pixel data in " + path);
  return img;
}

// --- PNG ---------------------------------------------------------------------

namespace {

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& in, size_t expected) {
  std::vector<uint8_t> out(expected);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  check(inflateInit(&zs) == Z_OK, "png: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = uInt(in.size());
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  check(rc == Z_STREAM_END && zs.avail_out == 0, "png: corrupt or truncated compressed data");
  return out;
}

uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return uint8_t(a);
  if (pb <= pc) return uint8_t(b);
  return uint8_t(c);
}

uint8_t luminance(int r, int g, int b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return uint8_t(std::lround(std::min(255.0, std::max(0.0, y))));
}

}  // namespace

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_png: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  check(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0,
        "read_png: " + path + " is not a PNG file");

  int64_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<uint8_t> idat;
  std::vector<std::array<uint8_t, 3>> palette;

  size_t pos = 8;
  bool seen_end = false;
  while (pos + 8 <= bytes.size() && !seen_end) {
    const uint32_t len = be32(&bytes[pos]);
    check(pos + 12 + len <= bytes.size(), "read_png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      check(len == 13, "read_png: bad IHDR");
      w = be32(data);
      h = be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      for (uint32_t i = 0; i + 2 < len; i += 3)
        palette.push_back({data[i], data[i + 1], data[i + 2]});
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_end = true;
    }
    pos += 12 + len;
  }
  check(w > 0 && h > 0, "read_png: missing IHDR in " + path);
  check(bit_depth == 8, "read_png: only 8-bit PNGs are supported (" + path + ")");
  check(interlace == 0, "read_png: interlaced PNGs are not supported (" + path + ")");

  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;  // gray
    case 2: channels = 3; break;  // rgb
    case 3: channels = 1; break;  // palette
    case 4: channels = 2; break;  // gray+alpha
    case 6: channels = 4; break;  // rgba
    default: fail("read_png: unsupported color type in " + path);
  }
  if (color_type == 3) check(!palette.empty(), "read_png: palette image without PLTE");

  const size_t stride = size_t(w) * size_t(channels);
  std::vector<uint8_t> raw = zlib_inflate(idat, (stride + 1) * size_t(h));

  std::vector<uint8_t> prev(stride, 0), cur(stride, 0);
  Image img(h, w);
  const int bpp = channels;
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* line = &raw[size_t(y) * (stride + 1)];
    const uint8_t filter = line[0];
    const uint8_t* src = line + 1;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= size_t(bpp) ? cur[i - size_t(bpp)] : 0;
      const int b = prev[i];
      const int c = i >= size_t(bpp) ? prev[i - size_t(bpp)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: fail("read_png: bad filter byte in " + path);
      }
      cur[i] = uint8_t(v & 0xff);
    }
    for (int64_t x = 0; x < w; ++x) {
      const uint8_t* p = &cur[size_t(x) * size_t(channels)];
      uint8_t g = 0;
      switch (color_type) {
        case 0:
        case 4: g = p[0]; break;
        case 2:
        case 6: g = luminance(p[0], p[1], p[2]); break;
        case 3: {
          check(p[0] < palette.size(), "read_png: palette index out of range");
          const auto& e = palette[p[0]];
          g = luminance(e[0], e[1], e[2]);
          break;
        }
      }
      img.at(y, x) = g;
    }
    std::swap(prev, cur);
  }
  return img;
}

Image read_image(const std::string& path) {
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return path.size() >= n &&
           std::equal(path.end() - std::string::difference_type(n), path.end(), suffix,
                      [](char a, char b) { return std::tolower(a) == b; });
  };
  if (ends_with(".pgm")) return read_pgm(path);
  if (ends_with(".png")) return read_png(path);
  fail("read_image: unknown extension for " + path + " (expected .pgm or .png)");
}

// --- geometry ----------------------------------------------------------------

namespace {

double sample_bilinear(const Image& img, double y, double x) {
  // clamp-to-edge
  x = std::min(std::max(x, 0.0), double(img.w - 1));
  y = std::min(std::max(y, 0.0), double(img.h - 1));
  const int64_t x0 = int64_t(std::floor(x)), y0 = int64_t(std::floor(y));
  const int64_t x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
  const double fx = x - double(x0), fy = y - double(y0);
  const double top = double(img.at(y0, x0)) * (1 - fx) + double(img.at(y0, x1)) * fx;
  const double bot = double(img.at(y1, x0)) * (1 - fx) + double(img.at(y1, x1)) * fx;
  return top * (1 - fy) + bot * fy;
}

uint8_t to_u8(double v) {
  return uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
}

}  // namespace

Image bilinear_resize(const Image& img, int64_t out_h, int64_t out_w) {
  check(img.h >= 1 && img.w >= 1, "bilinear_resize: empty image");
  check(out_h >= 1 && out_w >= 1, "bilinear_resize: bad target size");
  Image out(out_h, out_w);
  const double sy = double(img.h) / double(out_h);
  const double sx = double(img.w) / double(out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    const double src_y = (double(y) + 0.5) * sy - 0.5;
    for (int64_t x = 0; x < out_w; ++x) {
      const double src_x = (double(x) + 0.5) * sx - 0.5;
      out.at(y, x) = to_u8(sample_bilinear(img, src_y, src_x));
    }
  }
  return out;
}

Homography homography_from_corners(const std::array<std::array<double, 2>, 4>& src,
                                   const std::array<std::array<double, 2>, 4>& dst) {
  // DLT with h33 = 1: eight unknowns from four point pairs.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[size_t(i)][0], y = src[size_t(i)][1];
    const double u = dst[size_t(i)][0], v = dst[size_t(i)][1];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  // Gaussian elimination with partial pivoting
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    check(std::abs(a[pivot][col]) > 1e-12, "homography_from_corners: degenerate corners");
    if (pivot != col)
      for (int c = 0; c < 9; ++c) std::swap(a[pivot][c], a[col][c]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double factor = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= factor * a[col][c];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h[size_t(i)] = a[i][8] / a[i][i];
  h[8] = 1.0;
  return h;
}

Image warp_perspective(const Image& img, const Homography& dst_to_src) {
  Image out(img.h, img.w);
  for (int64_t y = 0; y < img.h; ++y) {
    for (int64_t x = 0; x < img.w; ++x) {
      const double denom = dst_to_src[6] * double(x) + dst_to_src[7] * double(y) + dst_to_src[8];
      const double sx = (dst_to_src[0] * double(x) + dst_to_src[1] * double(y) + dst_to_src[2]) / denom;
      const double sy = (dst_to_src[3] * double(x) + dst_to_src[4] * double(y) + dst_to_src[5]) / denom;
      out.at(y, x) = to_u8(sample_bilinear(img, sy, sx));
    }
  }
  return out;
}

}  // namespace pagg
