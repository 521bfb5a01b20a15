#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medart/tensor.hpp"

namespace medart {

/// 8-bit interleaved RGB image.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // height * width * 3

    uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

/// Reads a PNG; grayscale sources are replicated to three channels.
Image read_png(const std::string& path);
/// True when the file parses as a PNG header.
bool png_readable(const std::string& path);
/// Lossless 8-bit RGB PNG.
void write_png(const std::string& path, const Image& img);

/// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& img, int width, int height);

/// Image -> [3, H, W] values in [0, 1], appended to `out`.
void append_chw(const Image& img, std::vector<double>& out);
/// Sample b of a [B, 3, H, W] tensor in [0, 1] -> 8-bit image (round to nearest).
Image tensor_to_image(const Tensor& x, int64_t b);

}  // namespace medart
