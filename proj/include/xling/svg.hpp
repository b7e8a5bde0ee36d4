#pragma once

#include <string>
#include <vector>

namespace xling {

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct ChartLabels {
    std::string title;
    std::string x_label;
    std::string y_label;
};

// Plain SVG line chart, one polyline per series with a legend.
std::string line_chart_svg(const ChartLabels& labels, const std::vector<ChartSeries>& series);

// Scatter chart with one labelled point per entry of `point_labels` and an
// optional least-squares fit line.
std::string scatter_chart_svg(const ChartLabels& labels, const std::vector<double>& x, const std::vector<double>& y,
                              const std::vector<std::string>& point_labels, bool fit_line);

}  // namespace xling
