#pragma once

#include <string>
#include <vector>

namespace medart {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

/// Raster line chart (axes, gridlines, one colored polyline per series) as PNG.
/// Series names are not rendered; the caller records them alongside.
void write_line_plot(const std::string& path, const std::vector<PlotSeries>& series, int width = 640,
                     int height = 400);

}  // namespace medart
