#include "tiacam/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "tiacam/error.hpp"

namespace tiacam {

namespace {

struct ByteCursor {
  const std::vector<unsigned char>& bytes;
  size_t off = 0;
  std::string origin;

  [[noreturn]] void fail(const std::string& what) const {
    std::string where = origin.empty() ? "PPM" : origin;
    throw DataError("malformed PPM header in " + where + " at byte " +
                    std::to_string(off) + ": " + what);
  }

  bool done() const { return off >= bytes.size(); }
  unsigned char peek() const { return bytes[off]; }

  static bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' ||
           c == '\f';
  }

  // Whitespace and '#'-to-newline comments, as the header grammar allows.
  void skip_separators() {
    while (!done()) {
      if (is_space(peek())) {
        ++off;
      } else if (peek() == '#') {
        while (!done() && peek() != '\n') ++off;
      } else {
        return;
      }
    }
  }

  int read_int(const char* what) {
    skip_separators();
    if (done()) fail(std::string("unexpected end of data, expected ") + what);
    if (!std::isdigit(peek())) {
      fail(std::string("expected a digit for ") + what + ", got byte value " +
           std::to_string(int(peek())));
    }
    long long v = 0;
    while (!done() && std::isdigit(peek())) {
      v = v * 10 + (peek() - '0');
      if (v > 1'000'000'000LL) fail(std::string(what) + " is out of range");
      ++off;
    }
    return int(v);
  }
};

}  // namespace

Tensor decode_ppm(const std::vector<unsigned char>& bytes,
                  const std::string& origin) {
  ByteCursor cur{bytes, 0, origin};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    cur.fail("expected magic P6");
  }
  cur.off = 2;
  int w = cur.read_int("width");
  int h = cur.read_int("height");
  int maxval = cur.read_int("maxval");
  if (w <= 0 || h <= 0) cur.fail("image extents must be positive");
  if (maxval != 255) {
    cur.fail("maxval " + std::to_string(maxval) +
             " is unsupported, only 8-bit (255) images are read");
  }
  // Exactly one whitespace byte separates the header from the pixel bytes.
  if (cur.done() || !ByteCursor::is_space(cur.peek())) {
    cur.fail("expected a single whitespace byte before pixel data");
  }
  ++cur.off;

  size_t need = size_t(w) * size_t(h) * 3;
  if (bytes.size() - cur.off < need) {
    std::string where = origin.empty() ? "PPM" : origin;
    throw DataError("PPM pixel data in " + where + " truncated at byte " +
                    std::to_string(bytes.size()) + ": header promises " +
                    std::to_string(need) + " bytes from offset " +
                    std::to_string(cur.off));
  }
  Tensor out({h, w, 3});
  std::vector<double>& v = out.vec();
  for (size_t i = 0; i < need; ++i) {
    v[i] = double(bytes[cur.off + i]) / 255.0;
  }
  return out;
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image file " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(is),
                                   std::istreambuf_iterator<char>()};
  return decode_ppm(bytes, path);
}

std::vector<unsigned char> encode_ppm(const Tensor& img) {
  if (img.rank() != 3 || (img.shape()[2] != 3 && img.shape()[2] != 1)) {
    throw DataError("PPM output needs an {H,W,3} or {H,W,1} image, got rank " +
                    std::to_string(img.rank()));
  }
  int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  std::string header =
      "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + size_t(h) * w * 3);
  const std::vector<double>& v = img.vec();
  for (int i = 0; i < h * w; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      double x = v[size_t(i) * c + (c == 3 ? ch : 0)];
      x = std::clamp(x, 0.0, 1.0);
      bytes.push_back(static_cast<unsigned char>(std::lround(x * 255.0)));
    }
  }
  return bytes;
}

void write_ppm(const std::string& path, const Tensor& img) {
  std::vector<unsigned char> bytes = encode_ppm(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image file " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           std::streamsize(bytes.size()));
  if (!os.flush()) throw DataError("failed writing image file " + path);
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3) {
    throw DataError("resize needs an {H,W,C} image, got rank " +
                    std::to_string(img.rank()));
  }
  if (out_h <= 0 || out_w <= 0) {
    throw ConfigError("resize extents must be positive");
  }
  int h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  if (h == out_h && w == out_w) return Tensor(img.shape(), img.vec());

  Tensor out({out_h, out_w, c});
  const std::vector<double>& src = img.vec();
  std::vector<double>& dst = out.vec();
  auto at = [&](int y, int x, int ch) {
    return src[(size_t(y) * w + x) * c + ch];
  };
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * double(h) / out_h - 0.5;
    fy = std::clamp(fy, 0.0, double(h - 1));
    int y0 = int(fy);
    int y1 = std::min(y0 + 1, h - 1);
    double wy = fy - y0;
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * double(w) / out_w - 0.5;
      fx = std::clamp(fx, 0.0, double(w - 1));
      int x0 = int(fx);
      int x1 = std::min(x0 + 1, w - 1);
      double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        double top = (1 - wx) * at(y0, x0, ch) + wx * at(y0, x1, ch);
        double bot = (1 - wx) * at(y1, x0, ch) + wx * at(y1, x1, ch);
        dst[(size_t(i) * out_w + j) * c + ch] = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace tiacam
