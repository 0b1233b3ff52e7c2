#include "ddrnet/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ddrnet {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<uint8_t>& b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int64_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size()) throw FormatError(std::string("netpbm: truncated header reading ") + what);
    if (!std::isdigit(b_[pos_])) throw FormatError(std::string("netpbm: expected a number for ") + what);
    int64_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000'000) throw FormatError(std::string("netpbm: ") + what + " too large");
    }
    return v;
  }

  // exactly one whitespace byte separates maxval from the raster
  void raster_separator() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("netpbm: missing whitespace before raster");
    ++pos_;
  }

  size_t pos() const { return pos_; }
  void advance(size_t n) { pos_ += n; }

 private:
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const IndexTensor& check_mask(const IndexTensor& mask, int64_t& h, int64_t& w) {
  if (mask.rank() == 3 && mask.shape()[0] == 1) {
    h = mask.shape()[1];
    w = mask.shape()[2];
  } else if (mask.rank() == 2) {
    h = mask.shape()[0];
    w = mask.shape()[1];
  } else {
    throw ShapeError("mask must be HxW or 1xHxW, got " + mask.shape().str());
  }
  return mask;
}

}  // namespace

Image decode_netpbm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("netpbm: not a binary PGM/PPM (magic must be P5 or P6)");
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes);
  r.advance(2);
  img.width = r.number("width");
  img.height = r.number("height");
  const int64_t maxval = r.number("maxval");
  if (img.width < 1 || img.height < 1) throw FormatError("netpbm: width and height must be positive");
  if (maxval < 1 || maxval > 65535) throw FormatError("netpbm: maxval must be in [1, 65535]");
  img.maxval = static_cast<uint16_t>(maxval);
  r.raster_separator();

  const int bps = maxval > 255 ? 2 : 1;
  const int64_t count = img.width * img.height * img.channels;
  const size_t need = static_cast<size_t>(count * bps);
  if (bytes.size() - r.pos() < need) throw FormatError("netpbm: raster truncated");
  img.samples.resize(static_cast<size_t>(count));
  const uint8_t* p = bytes.data() + r.pos();
  for (int64_t i = 0; i < count; ++i) {
    const uint16_t v = bps == 2 ? static_cast<uint16_t>(p[2 * i] << 8 | p[2 * i + 1]) : p[i];
    if (v > img.maxval) throw FormatError("netpbm: sample exceeds maxval");
    img.samples[static_cast<size_t>(i)] = v;
  }
  return img;
}

std::vector<uint8_t> encode_netpbm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ValueError("netpbm: channels must be 1 or 3");
  if (image.width < 1 || image.height < 1) throw ValueError("netpbm: empty image");
  if (image.maxval < 1) throw ValueError("netpbm: maxval must be >= 1");
  const int64_t count = image.width * image.height * image.channels;
  if (static_cast<int64_t>(image.samples.size()) != count) throw ShapeError("netpbm: sample count mismatch");
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n" + std::to_string(image.maxval) + "\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  const bool wide = image.maxval > 255;
  out.reserve(out.size() + static_cast<size_t>(count) * (wide ? 2 : 1));
  for (uint16_t v : image.samples) {
    if (v > image.maxval) throw ValueError("netpbm: sample exceeds maxval");
    if (wide) out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v & 0xff));
  }
  return out;
}

Image read_netpbm(const std::string& path) {
  try {
    return decode_netpbm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_netpbm(const std::string& path, const Image& image) {
  const auto bytes = encode_netpbm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Tensor image_to_tensor(const Image& image, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
  for (double s : std) {
    if (!(s > 0.0)) throw ValueError("normalization std must be positive");
  }
  Tensor t(Shape{1, 3, image.height, image.width});
  const int64_t hw = image.height * image.width;
  for (int c = 0; c < 3; ++c) {
    const int src = image.channels == 3 ? c : 0;
    float* dst = t.plane(0, c);
    for (int64_t i = 0; i < hw; ++i) {
      const double v = image.samples[static_cast<size_t>(i * image.channels + src)] / double(image.maxval);
      dst[i] = static_cast<float>((v - mean[static_cast<size_t>(c)]) / std[static_cast<size_t>(c)]);
    }
  }
  return t;
}

Palette parse_palette(const std::string& text) {
  Palette pal;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<long> v;
    long x = 0;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw FormatError("palette line " + std::to_string(lineno) + ": not a number");
    if (v.empty()) continue;
    if (v.size() != 3) throw FormatError("palette line " + std::to_string(lineno) + ": expected 3 values");
    std::array<uint8_t, 3> rgb{};
    for (size_t k = 0; k < 3; ++k) {
      if (v[k] < 0 || v[k] > 255) throw FormatError("palette line " + std::to_string(lineno) + ": value out of 0..255");
      rgb[k] = static_cast<uint8_t>(v[k]);
    }
    pal.push_back(rgb);
  }
  if (pal.empty()) throw FormatError("palette has no entries");
  return pal;
}

Palette read_palette(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return parse_palette(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Image mask_to_pgm(const IndexTensor& mask) {
  Image img;
  check_mask(mask, img.height, img.width);
  img.channels = 1;
  img.maxval = 255;
  img.samples.reserve(static_cast<size_t>(mask.numel()));
  for (int32_t v : mask.data()) {
    if (v < 0 || v > 255) throw ValueError("class index " + std::to_string(v) + " does not fit in a P5 byte");
    img.samples.push_back(static_cast<uint16_t>(v));
  }
  return img;
}

Image mask_to_ppm(const IndexTensor& mask, const Palette& palette) {
  Image img;
  check_mask(mask, img.height, img.width);
  img.channels = 3;
  img.maxval = 255;
  img.samples.reserve(static_cast<size_t>(mask.numel() * 3));
  for (int32_t v : mask.data()) {
    if (v < 0 || v >= static_cast<int32_t>(palette.size())) {
      throw ValueError("class " + std::to_string(v) + " has no palette entry (" + std::to_string(palette.size()) +
                       " colours)");
    }
    for (uint8_t c : palette[static_cast<size_t>(v)]) img.samples.push_back(c);
  }
  return img;
}

}  // namespace ddrnet
