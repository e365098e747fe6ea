#include "ltformer/imaging/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "ltformer/errors.hpp"

namespace ltformer {

GrayImage::GrayImage(int w, int h, uint8_t fill)
    : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

RgbImage::RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

uint8_t luma(uint8_t r, uint8_t g, uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<uint8_t>(std::min(255L, std::lround(y)));
}

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage out(rgb.width, rgb.height);
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = luma(rgb.pixels[3 * i], rgb.pixels[3 * i + 1], rgb.pixels[3 * i + 2]);
  }
  return out;
}

RgbImage to_rgb(const GrayImage& gray) {
  RgbImage out(gray.width, gray.height);
  for (size_t i = 0; i < gray.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = gray.pixels[i];
  }
  return out;
}

namespace {

struct Netpbm {
  int channels = 0;
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;
};

// Header tokens are separated by whitespace; '#' starts a comment that runs
// to the end of the line.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& path) : s_(bytes), path_(path) {}

  std::string token() {
    skip_space();
    const size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (start == pos_) throw IoError(path_ + ": truncated header");
    return s_.substr(start, pos_ - start);
  }

  int number() {
    const std::string t = token();
    int v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c)) || v > 1'000'000) {
        throw IoError(path_ + ": bad header field '" + t + "'");
      }
      v = v * 10 + (c - '0');
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  size_t raster_start() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      throw IoError(path_ + ": truncated header");
    }
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < s_.size()) {
      if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& s_;
  const std::string& path_;
  size_t pos_ = 0;
};

Netpbm read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderReader hr(bytes, path);
  const std::string magic = hr.token();
  Netpbm img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw IoError(path + ": unsupported format '" + magic.substr(0, 8) +
                  "' (expected binary P5 or P6)");
  }
  img.width = hr.number();
  img.height = hr.number();
  const int maxval = hr.number();
  if (img.width < 1 || img.height < 1) throw IoError(path + ": empty image");
  if (maxval != 255) {
    throw IoError(path + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  }
  const size_t start = hr.raster_start();
  const size_t need = static_cast<size_t>(img.width) * img.height * img.channels;
  if (bytes.size() < start + need) {
    throw IoError(path + ": truncated raster (" + std::to_string(bytes.size() - start) +
                  " of " + std::to_string(need) + " bytes)");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  return img;
}

void write_netpbm(const std::string& path, const char* magic, int w, int h,
                  const std::vector<uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace

GrayImage load_image(const std::string& path) {
  Netpbm raw = read_netpbm(path);
  GrayImage out;
  out.width = raw.width;
  out.height = raw.height;
  if (raw.channels == 1) {
    out.pixels = std::move(raw.pixels);
    return out;
  }
  RgbImage rgb;
  rgb.width = raw.width;
  rgb.height = raw.height;
  rgb.pixels = std::move(raw.pixels);
  return to_gray(rgb);
}

RgbImage load_rgb(const std::string& path) {
  Netpbm raw = read_netpbm(path);
  if (raw.channels == 3) {
    RgbImage out;
    out.width = raw.width;
    out.height = raw.height;
    out.pixels = std::move(raw.pixels);
    return out;
  }
  GrayImage g;
  g.width = raw.width;
  g.height = raw.height;
  g.pixels = std::move(raw.pixels);
  return to_rgb(g);
}

void save_pgm(const GrayImage& img, const std::string& path) {
  write_netpbm(path, "P5", img.width, img.height, img.pixels);
}

void save_ppm(const RgbImage& img, const std::string& path) {
  write_netpbm(path, "P6", img.width, img.height, img.pixels);
}

}  // namespace ltformer
