#pragma once

#include "spaigen/metrics.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace spaigen {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // sorted by x on output
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<PlotSeries> series;
};

/// Self-contained SVG line plot with markers and a legend.
std::string render_svg(const PlotSpec& spec);
void write_svg(const std::filesystem::path& path, const PlotSpec& spec);

/// iterations_vs_n.svg, condition_vs_n.svg and density_vs_n.svg in `dir`, one series per
/// method. Matched IC rows are grouped under "ic_droptol[matched]" so runs at different n
/// line up. Returns the written paths.
std::vector<std::filesystem::path> write_benchmark_plots(const std::vector<BenchmarkRow>& rows,
                                                         const std::filesystem::path& dir);

}  // namespace spaigen
