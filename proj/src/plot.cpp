#include "medart/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "medart/image_io.hpp"

namespace medart {

namespace {
using Rgb = std::array<uint8_t, 3>;
constexpr std::array<Rgb, 6> kPalette = {{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207}}};

struct Canvas {
    Image img;
    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        auto* p = &img.rgb[(static_cast<size_t>(y) * img.width + x) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x0 += sx; }
            if (e2 <= dx) { err += dx; y0 += sy; }
        }
    }
};
}  // namespace

void write_line_plot(const std::string& path, const std::vector<PlotSeries>& series, int width, int height) {
    if (series.empty()) throw std::invalid_argument("plot: no series");
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series '" + s.name + "' has mismatched x/y");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!std::isfinite(xmin)) throw std::invalid_argument("plot: no finite points");
    if (xmax == xmin) { xmin -= 1; xmax += 1; }
    if (ymax == ymin) { ymin -= 1; ymax += 1; }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    Canvas cv;
    cv.img.width = width;
    cv.img.height = height;
    cv.img.rgb.assign(static_cast<size_t>(width) * height * 3, 255);
    const int l = 50, r = width - 20, t = 20, b = height - 40;
    auto px = [&](double x) { return l + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (r - l))); };
    auto py = [&](double y) { return b - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (b - t))); };

    for (int g = 1; g < 5; ++g) {
        const int gy = t + g * (b - t) / 5, gx = l + g * (r - l) / 5;
        cv.line(l, gy, r, gy, {225, 225, 225});
        cv.line(gx, t, gx, b, {225, 225, 225});
    }
    cv.line(l, b, r, b, {0, 0, 0});
    cv.line(l, t, l, b, {0, 0, 0});

    for (size_t si = 0; si < series.size(); ++si) {
        const Rgb c = kPalette[si % kPalette.size()];
        const auto& s = series[si];
        int prev_x = 0, prev_y = 0;
        bool have_prev = false;
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                have_prev = false;
                continue;
            }
            const int x = px(s.x[i]), y = py(s.y[i]);
            if (have_prev) cv.line(prev_x, prev_y, x, y, c);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) cv.set(x + dx, y + dy, c);
            prev_x = x;
            prev_y = y;
            have_prev = true;
        }
    }
    write_png(path, cv.img);
}

}  // namespace medart
