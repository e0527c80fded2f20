#include "tricov/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "tricov/errors.hpp"

namespace tricov {

namespace {

class PnmReader {
 public:
  PnmReader(std::string bytes, std::string name)
      : bytes_(std::move(bytes)), name_(std::move(name)) {}

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number() {
    skip_space();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      ++pos_;
    }
    if (pos_ == start) throw ParseError(name_ + ": expected an integer", start);
    return value;
  }

  unsigned binary_sample(int max_value) {
    const std::size_t need = max_value > 255 ? 2 : 1;
    if (pos_ + need > bytes_.size()) {
      throw ParseError(name_ + ": truncated pixel data", pos_);
    }
    unsigned v = static_cast<unsigned char>(bytes_[pos_++]);
    if (need == 2) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_++]);
    return v;
  }

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') {
      throw ParseError(name_ + ": not a PNM file", 0);
    }
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  // The single whitespace byte between header and raster.
  void end_header() { ++pos_; }

 private:
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<float> to_grayscale(std::span<const float> rgb) {
  std::vector<float> gray(rgb.size() / 3);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = kLumaR * rgb[3 * i] + kLumaG * rgb[3 * i + 1] + kLumaB * rgb[3 * i + 2];
  }
  return gray;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  PnmReader reader(std::move(bytes), path.string());

  const std::string magic = reader.magic();
  const bool binary = magic == "P5" || magic == "P6";
  const bool color = magic == "P3" || magic == "P6";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw InputError(path.string() + ": unsupported PNM type " + magic);
  }
  const long width = reader.number();
  const long height = reader.number();
  const long max_value = reader.number();
  if (width <= 0 || height <= 0 || max_value <= 0 || max_value > 65535) {
    throw InputError(path.string() + ": invalid PNM header");
  }
  if (binary) reader.end_header();

  const std::size_t channels = color ? 3 : 1;
  std::vector<float> values(static_cast<std::size_t>(width * height) * channels);
  const float scale = 1.0f / static_cast<float>(max_value);
  for (auto& v : values) {
    const long raw = binary ? static_cast<long>(reader.binary_sample(static_cast<int>(max_value)))
                            : reader.number();
    v = static_cast<float>(raw) * scale;
  }

  Image image(static_cast<int>(width), static_cast<int>(height));
  image.pixels = color ? to_grayscale(values) : std::move(values);
  return image;
}

void write_pgm(const std::filesystem::path& path, const Image& image, float lo, float hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  const float span = hi > lo ? hi - lo : 1.0f;
  std::string raster(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const float v = std::clamp((image.pixels[i] - lo) / span, 0.0f, 1.0f);
    raster[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

}  // namespace tricov
