#include "savt/image.hpp"

#include <cmath>
#include <fstream>

#include "savt/error.hpp"

namespace savt {

void write_ppm(const std::string& path, const Tensor& image, std::size_t upscale) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw ShapeError("write_ppm: expected [H x W x 3], got " + shape_to_string(image.shape()));
  }
  if (upscale == 0) throw ValidationError("write_ppm: upscale must be >= 1");
  const std::size_t h = image.extent(0) * upscale, w = image.extent(1) * upscale;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_ppm: cannot open '" + path + "'");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double v = image(y / upscale, x / upscale, c);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write_ppm: write to '" + path + "' failed");
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("read_ppm: '" + path + "' is not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w == 0 || h == 0 || maxval != 255) {
    throw IoError("read_ppm: unsupported header in '" + path + "'");
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(w * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("read_ppm: truncated pixel data in '" + path + "'");
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < buf.size(); ++i) img[i] = buf[i] / 255.0;
  return img;
}

}  // namespace savt
