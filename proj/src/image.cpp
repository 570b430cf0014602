#include "capslstm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#ifdef CAPSLSTM_HAVE_PNG
#include <png.h>
#endif

namespace capslstm {

namespace {

class PpmHeader {
 public:
  PpmHeader(std::span<const unsigned char> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') throw FormatError(source_ + ": not a PPM file (bad magic)");
    pos_ = 2;
    return std::string{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw FormatError(source_ + ": PPM " + what + " too large");
    }
    if (digits == 0) throw FormatError(source_ + ": PPM header truncated or malformed at " + what);
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(source_ + ": PPM header not terminated");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const unsigned char> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

#ifdef CAPSLSTM_HAVE_PNG
Tensor<float> decode_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw FormatError(path.string() + ": " + image.message);
  }
  const bool rgb8 = (image.format & PNG_FORMAT_FLAG_COLOR) && !(image.format & PNG_FORMAT_FLAG_ALPHA) &&
                    !(image.format & PNG_FORMAT_FLAG_LINEAR);
  if (!rgb8) {
    png_image_free(&image);
    throw ValidationError(path.string() + ": PNG is not 8-bit RGB");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + image.message);
  }
  std::vector<float> values(raster.begin(), raster.end());
  return Tensor<float>({image.height, image.width, 3}, std::move(values));
}
#endif

}  // namespace

Tensor<float> decode_ppm(std::span<const unsigned char> bytes, const std::string& source) {
  PpmHeader header(bytes, source);
  const std::string magic = header.magic();
  if (magic == "P5" || magic == "P4" || magic == "P2" || magic == "P1") {
    throw ValidationError(source + ": image is not RGB (" + magic + ")");
  }
  if (magic != "P6") throw FormatError(source + ": unsupported PPM variant " + magic);
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) throw FormatError(source + ": zero image extent");
  if (maxval != 255) {
    throw FormatError(source + ": unsupported PPM maxval " + std::to_string(maxval) + " (only 255)");
  }
  const std::size_t offset = header.raster_offset();
  const std::size_t n = width * height * 3;
  if (bytes.size() < offset || bytes.size() - offset < n) throw FormatError(source + ": PPM raster truncated");
  std::vector<float> values(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                            bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return Tensor<float>({height, width, 3}, std::move(values));
}

std::vector<unsigned char> encode_ppm(const Tensor<float>& rgb255) {
  if (rgb255.rank() != 3 || rgb255.extent(2) != 3) {
    throw DimensionError("PPM encoding needs [H,W,3], got " + shape_string(rgb255.shape()));
  }
  const std::string header = "P6\n" + std::to_string(rgb255.extent(1)) + " " + std::to_string(rgb255.extent(0)) +
                             "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + rgb255.size());
  for (float v : rgb255.data()) {
    const double clamped = std::clamp(static_cast<double>(v), 0.0, 255.0);
    out.push_back(static_cast<unsigned char>(std::floor(clamped + 0.5)));
  }
  return out;
}

bool png_supported() noexcept {
#ifdef CAPSLSTM_HAVE_PNG
  return true;
#else
  return false;
#endif
}

Tensor<float> decode_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
#ifdef CAPSLSTM_HAVE_PNG
    return decode_png(path);
#else
    throw FormatError(path.string() + ": PNG support not compiled in");
#endif
  }
  const std::vector<unsigned char> bytes = read_bytes(path);
  return decode_ppm(bytes, path.string());
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& rgb255) {
  const std::vector<unsigned char> bytes = encode_ppm(rgb255);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw DimensionError("resize expects [H,W,C], got " + shape_string(image.shape()));
  const std::size_t ih = image.extent(0), iw = image.extent(1), ch = image.extent(2);
  if (ih == height && iw == width) return image;
  Tensor<float> out({height, width, ch});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out_extent) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_extent) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source(y, ih, height);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source(x, iw, width);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image[(yy * iw + xx) * ch + c]); };
        const double top = px(y0, x0) * (1 - fx) + px(y0, x1) * fx;
        const double bottom = px(y1, x0) * (1 - fx) + px(y1, x1) * fx;
        out[(y * width + x) * ch + c] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace capslstm
