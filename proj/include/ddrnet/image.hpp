#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ddrnet/tensor.hpp"

namespace ddrnet {

/// 8- or 16-bit interleaved samples as read from a netpbm file.
struct Image {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 0;  // 1 (P5) or 3 (P6)
  uint16_t maxval = 255;
  std::vector<uint16_t> samples;  // row-major, channels interleaved
};

/// Binary PGM (P5) / PPM (P6), header comments allowed, maxval 1..65535
/// (two bytes per sample, most significant first, above 255).
Image decode_netpbm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_netpbm(const Image& image);
Image read_netpbm(const std::string& path);
void write_netpbm(const std::string& path, const Image& image);

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

/// 1 x 3 x H x W tensor, (sample / maxval - mean[c]) / std[c]. Grey images
/// are replicated to three channels.
Tensor image_to_tensor(const Image& image, const std::array<double, 3>& mean = kImageNetMean,
                       const std::array<double, 3>& std = kImageNetStd);

using Palette = std::vector<std::array<uint8_t, 3>>;

/// One "R G B" triple per line; blank lines and '#' comments skipped.
Palette parse_palette(const std::string& text);
Palette read_palette(const std::string& path);

/// Class map (1 x H x W or H x W) as P5 of class indices; values must fit in 0..255.
Image mask_to_pgm(const IndexTensor& mask);
/// Class map coloured through a palette as P6; every class needs an entry.
Image mask_to_ppm(const IndexTensor& mask, const Palette& palette);

}  // namespace ddrnet
