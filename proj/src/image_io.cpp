#include "medart/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace medart {

Image read_png(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw std::runtime_error("cannot read image " + path + ": " + pi.message);
    const bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
    pi.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = pi.message;
        png_image_free(&pi);
        throw std::runtime_error("cannot decode image " + path + ": " + msg);
    }
    Image img;
    img.width = static_cast<int>(pi.width);
    img.height = static_cast<int>(pi.height);
    if (color) {
        img.rgb = std::move(buf);
    } else {
        img.rgb.resize(buf.size() * 3);
        for (size_t i = 0; i < buf.size(); ++i) img.rgb[3 * i] = img.rgb[3 * i + 1] = img.rgb[3 * i + 2] = buf[i];
    }
    return img;
}

bool png_readable(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str())) return false;
    png_image_free(&pi);
    return true;
}

void write_png(const std::string& path, const Image& img) {
    if (img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw std::invalid_argument("write_png: pixel buffer size mismatch");
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, img.rgb.data(), 0, nullptr))
        throw std::runtime_error("cannot write image " + path + ": " + pi.message);
}

Image resize_bilinear(const Image& img, int width, int height) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("resize: target size must be positive");
    if (img.width == width && img.height == height) return img;
    Image out;
    out.width = width;
    out.height = height;
    out.rgb.resize(static_cast<size_t>(width) * height * 3);
    const double sx = static_cast<double>(img.width) / width;
    const double sy = static_cast<double>(img.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
                const double v = top * (1.0 - wy) + bot * wy;
                out.rgb[(static_cast<size_t>(y) * width + x) * 3 + c] =
                    static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

void append_chw(const Image& img, std::vector<double>& out) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.push_back(img.at(y, x, c) / 255.0);
}

Image tensor_to_image(const Tensor& x, int64_t b) {
    if (x.ndim() != 4 || x.dim(1) != 3) throw std::invalid_argument("tensor_to_image: expected [B,3,H,W]");
    const int64_t H = x.dim(2), W = x.dim(3);
    Image img;
    img.width = static_cast<int>(W);
    img.height = static_cast<int>(H);
    img.rgb.resize(static_cast<size_t>(H * W * 3));
    const auto d = x.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
                const double v = std::clamp(d[((b * 3 + c) * H + y) * W + xx], 0.0, 1.0);
                img.rgb[(y * W + xx) * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

}  // namespace medart
