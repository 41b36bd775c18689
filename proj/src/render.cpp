#include "nobias/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "nobias/errors.hpp"

namespace nobias {
namespace {

std::size_t read_header_value(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      is.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(is >> v)) throw FormatError("malformed PNM header");
  return v;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

void write_pnm(std::ostream& os, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("PNM output needs 1 or 3 channels");
  }
  if (image.width == 0 || image.height == 0 ||
      image.pixels.size() != image.width * image.height * image.channels) {
    throw std::invalid_argument("image size does not match its pixel buffer");
  }
  os << (image.channels == 1 ? "P5" : "P6") << '\n'
     << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw std::runtime_error("failed writing PNM data");
}

void save_pnm(const Image& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_pnm(os, image);
}

Image read_pnm(std::istream& is) {
  char magic[2] = {};
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file");
  }
  Image image;
  image.channels = magic[1] == '5' ? 1 : 3;
  image.width = read_header_value(is);
  image.height = read_header_value(is);
  const std::size_t maxval = read_header_value(is);
  if (image.width == 0 || image.height == 0) throw FormatError("PNM image has zero extent");
  if (maxval != 255) throw FormatError("only maxval 255 is supported");
  const int sep = is.get();
  if (sep != ' ' && sep != '\t' && sep != '\n' && sep != '\r') {
    throw FormatError("malformed PNM header");
  }
  image.pixels.resize(image.width * image.height * image.channels);
  if (!is.read(reinterpret_cast<char*>(image.pixels.data()),
               static_cast<std::streamsize>(image.pixels.size()))) {
    throw FormatError("truncated PNM pixel data");
  }
  return image;
}

Image load_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_pnm(is);
}

Tensor image_to_tensor(const Image& image) {
  Tensor t({image.channels, image.height, image.width});
  const std::size_t hw = image.height * image.width;
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      t[c * hw + p] = image.pixels[p * image.channels + c] / 255.0;
    }
  }
  return t;
}

double abs_percentile(const Tensor& scores, double percentile) {
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw std::invalid_argument("percentile must lie in (0, 100]");
  }
  std::vector<double> a(scores.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::abs(scores[i]);
  std::sort(a.begin(), a.end());
  const double pos = percentile / 100.0 * static_cast<double>(a.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, a.size() - 1);
  return a[lo] + (pos - static_cast<double>(lo)) * (a[hi] - a[lo]);
}

Image render_heatmap(const Tensor& scores2d, double percentile) {
  if (scores2d.rank() != 2) {
    throw ShapeError("heatmap needs H x W scores, got " + shape_string(scores2d.shape()));
  }
  if (!scores2d.all_finite()) throw std::invalid_argument("heatmap scores must be finite");
  const double scale = abs_percentile(scores2d, percentile);
  Image image{scores2d.extent(1), scores2d.extent(0), 3, {}};
  image.pixels.reserve(scores2d.size() * 3);
  for (double v : scores2d.data()) {
    const double t = scale > 0.0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
    const std::uint8_t fade = to_byte(255.0 * (1.0 - std::abs(t)));
    if (t >= 0.0) {
      image.pixels.insert(image.pixels.end(), {255, fade, fade});
    } else {
      image.pixels.insert(image.pixels.end(), {fade, fade, 255});
    }
  }
  return image;
}

}  // namespace nobias
