#include "xling/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xling/io.hpp"
#include "xling/numerics.hpp"

namespace xling {
namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) { return format_fixed(v, 2); }

struct Frame {
    double x0, x1, y0, y1;

    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame make_frame(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.empty() || ys.empty()) throw ValidationError("chart: no data points");
    auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
    auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
    Frame f{*xmin, *xmax, *ymin, *ymax};
    if (f.x1 == f.x0) f.x1 = f.x0 + 1.0;
    if (f.y1 == f.y0) f.y1 = f.y0 + 1.0;
    const double pad = 0.05 * (f.y1 - f.y0);
    f.y0 -= pad;
    f.y1 += pad;
    return f;
}

std::string axes(const Frame& f, const ChartLabels& labels) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(labels.title) + "</text>\n";
    const double bx = kLeft, by = kHeight - kBottom, ex = kWidth - kRight, ey = kTop;
    s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(by) + "\" x2=\"" + num(ex) + "\" y2=\"" + num(by) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(by) + "\" x2=\"" + num(bx) + "\" y2=\"" + num(ey) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
        const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
        s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(by + 16) + "\" text-anchor=\"middle\">" +
             format_fixed(xv, 2) + "</text>\n";
        s += "<text x=\"" + num(bx - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" +
             format_fixed(yv, 3) + "</text>\n";
    }
    s += "<text x=\"" + num((bx + ex) / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">" +
         escape(labels.x_label) + "</text>\n";
    s += "<text x=\"16\" y=\"" + num((by + ey) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((by + ey) / 2) + ")\">" + escape(labels.y_label) + "</text>\n";
    return s;
}

}  // namespace

std::string line_chart_svg(const ChartLabels& labels, const std::vector<ChartSeries>& series) {
    std::vector<double> xs, ys;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ShapeError("chart: series '" + s.name + "' has ragged x/y");
        xs.insert(xs.end(), s.x.begin(), s.x.end());
        ys.insert(ys.end(), s.y.begin(), s.y.end());
    }
    const Frame f = make_frame(xs, ys);
    std::string svg = axes(f, labels);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const std::string color = kPalette[i % std::size(kPalette)];
        std::string pts;
        for (std::size_t k = 0; k < series[i].x.size(); ++k)
            pts += num(f.px(series[i].x[k])) + "," + num(f.py(series[i].y[k])) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = kTop + 18.0 * static_cast<double>(i);
        svg += "<line x1=\"" + num(kWidth - kRight + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" +
               num(kWidth - kRight + 32) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(kWidth - kRight + 38) + "\" y=\"" + num(ly + 4) + "\">" + escape(series[i].name) +
               "</text>\n";
    }
    return svg + "</svg>\n";
}

std::string scatter_chart_svg(const ChartLabels& labels, const std::vector<double>& x, const std::vector<double>& y,
                              const std::vector<std::string>& point_labels, bool fit_line) {
    if (x.size() != y.size() || x.size() != point_labels.size())
        throw ShapeError("scatter chart: x, y and labels differ in length");
    const Frame f = make_frame(x, y);
    std::string svg = axes(f, labels);
    for (std::size_t i = 0; i < x.size(); ++i) {
        svg += "<circle cx=\"" + num(f.px(x[i])) + "\" cy=\"" + num(f.py(y[i])) + "\" r=\"4\" fill=\"#1f77b4\"/>\n";
        svg += "<text x=\"" + num(f.px(x[i]) + 6) + "\" y=\"" + num(f.py(y[i]) - 6) + "\">" + escape(point_labels[i]) +
               "</text>\n";
    }
    if (fit_line && x.size() >= 2) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mx += x[i];
            my += y[i];
        }
        mx /= static_cast<double>(x.size());
        my /= static_cast<double>(x.size());
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
        }
        if (sxx > 0) {
            const double slope = sxy / sxx;
            const double a = my + slope * (f.x0 - mx), b = my + slope * (f.x1 - mx);
            svg += "<line x1=\"" + num(f.px(f.x0)) + "\" y1=\"" + num(f.py(a)) + "\" x2=\"" + num(f.px(f.x1)) +
                   "\" y2=\"" + num(f.py(b)) + "\" stroke=\"#d62728\" stroke-dasharray=\"6 4\"/>\n";
        }
    }
    return svg + "</svg>\n";
}

}  // namespace xling
