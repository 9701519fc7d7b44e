#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fewshot {

// One labeled line of y-values over an implicit 0..n-1 x-axis.
struct PlotSeries {
    std::string name;
    std::vector<double> y;
};

// Minimal static line chart written as an 8-bit RGB PNG.
void write_line_plot_png(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                         int width = 640, int height = 400);

}  // namespace fewshot
