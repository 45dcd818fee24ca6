#pragma once

// Dependency-free SVG line charts for the training curves and the ROC plot.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scalelab/errors.hpp"
#include "scalelab/metrics.hpp"

namespace scalelab {

struct ChartSeries {
    std::string label;
    std::vector<double> xs, ys;
};

namespace detail {

inline constexpr int kChartWidth = 640;
inline constexpr int kChartHeight = 480;
inline constexpr int kMarginLeft = 64, kMarginRight = 24, kMarginTop = 40, kMarginBottom = 48;

inline const char* series_color(size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"};
    return colors[i % 4];
}

inline std::string fmt_number(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct AxisScale {
    double lo, hi;
    double px(double v, double px_lo, double px_hi) const {
        const double t = hi == lo ? 0.5 : (v - lo) / (hi - lo);
        return px_lo + t * (px_hi - px_lo);
    }
};

}  // namespace detail

// Multi-series line chart; one polyline per series, simple axes with min/max
// labels and a legend.
inline void svg_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series) {
    if (series.empty()) throw ValueError("svg_line_chart: no series");
    double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
    bool first = true;
    for (const auto& s : series) {
        if (s.xs.size() != s.ys.size() || s.xs.empty()) throw ValueError("svg_line_chart: series '" + s.label + "' is empty");
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (first) {
                x_lo = x_hi = s.xs[i];
                y_lo = y_hi = s.ys[i];
                first = false;
            }
            x_lo = std::min(x_lo, s.xs[i]);
            x_hi = std::max(x_hi, s.xs[i]);
            y_lo = std::min(y_lo, s.ys[i]);
            y_hi = std::max(y_hi, s.ys[i]);
        }
    }
    if (y_hi == y_lo) {
        y_hi += 0.5;
        y_lo -= 0.5;
    }
    if (x_hi == x_lo) x_hi += 1.0;

    using namespace detail;
    const AxisScale sx{x_lo, x_hi};
    const AxisScale sy{y_lo, y_hi};
    const double px_left = kMarginLeft, px_right = kChartWidth - kMarginRight;
    const double px_top = kMarginTop, px_bottom = kChartHeight - kMarginBottom;

    std::ofstream out(path);
    if (!out) throw IoError("svg_line_chart: cannot open " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartWidth << "\" height=\"" << kChartHeight
        << "\" viewBox=\"0 0 " << kChartWidth << ' ' << kChartHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kChartWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
        << "</text>\n";
    // axes
    out << "<line x1=\"" << px_left << "\" y1=\"" << px_bottom << "\" x2=\"" << px_right << "\" y2=\"" << px_bottom
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << px_left << "\" y1=\"" << px_top << "\" x2=\"" << px_left << "\" y2=\"" << px_bottom
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << (px_left + px_right) / 2 << "\" y=\"" << kChartHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << (px_top + px_bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << (px_top + px_bottom) / 2 << ")\">" << y_label << "</text>\n";
    out << "<text x=\"" << px_left << "\" y=\"" << px_bottom + 16 << "\" font-size=\"10\">" << fmt_number(x_lo)
        << "</text>\n";
    out << "<text x=\"" << px_right << "\" y=\"" << px_bottom + 16 << "\" text-anchor=\"end\" font-size=\"10\">"
        << fmt_number(x_hi) << "</text>\n";
    out << "<text x=\"" << px_left - 6 << "\" y=\"" << px_bottom << "\" text-anchor=\"end\" font-size=\"10\">"
        << fmt_number(y_lo) << "</text>\n";
    out << "<text x=\"" << px_left - 6 << "\" y=\"" << px_top + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << fmt_number(y_hi) << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const ChartSeries& s = series[si];
        out << "<polyline fill=\"none\" stroke=\"" << series_color(si) << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (i) out << ' ';
            out << fmt_number(sx.px(s.xs[i], px_left, px_right)) << ',' << fmt_number(sy.px(s.ys[i], px_bottom, px_top));
        }
        out << "\"/>\n";
        const double ly = px_top + 14.0 * static_cast<double>(si);
        out << "<line x1=\"" << px_right - 110 << "\" y1=\"" << ly << "\" x2=\"" << px_right - 90 << "\" y2=\"" << ly
            << "\" stroke=\"" << series_color(si) << "\" stroke-width=\"1.5\"/>\n";
        out << "<text x=\"" << px_right - 84 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("svg_line_chart: failed writing " + path.string());
}

// ROC plot: the curve plus the chance diagonal, both axes fixed to [0,1].
inline void svg_roc_chart(const std::filesystem::path& path, const std::vector<RocPoint>& points, double auc) {
    if (points.empty()) throw ValueError("svg_roc_chart: empty curve");
    using namespace detail;
    const double px_left = kMarginLeft, px_right = kChartWidth - kMarginRight;
    const double px_top = kMarginTop, px_bottom = kChartHeight - kMarginBottom;
    const auto X = [&](double v) { return px_left + v * (px_right - px_left); };
    const auto Y = [&](double v) { return px_bottom - v * (px_bottom - px_top); };

    std::ofstream out(path);
    if (!out) throw IoError("svg_roc_chart: cannot open " + path.string());
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ROC curve (AUC = %.4f)", auc);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kChartWidth << "\" height=\"" << kChartHeight
        << "\" viewBox=\"0 0 " << kChartWidth << ' ' << kChartHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kChartWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << buf
        << "</text>\n";
    out << "<line x1=\"" << px_left << "\" y1=\"" << px_bottom << "\" x2=\"" << px_right << "\" y2=\"" << px_bottom
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << px_left << "\" y1=\"" << px_top << "\" x2=\"" << px_left << "\" y2=\"" << px_bottom
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << (px_left + px_right) / 2 << "\" y=\"" << kChartHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">false positive rate</text>\n";
    out << "<text x=\"16\" y=\"" << (px_top + px_bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << (px_top + px_bottom) / 2 << ")\">true positive rate</text>\n";
    // chance diagonal
    out << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(1)
        << "\" stroke=\"#999999\" stroke-dasharray=\"6 4\"/>\n";
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < points.size(); ++i) {
        if (i) out << ' ';
        out << fmt_number(X(points[i].fpr)) << ',' << fmt_number(Y(points[i].tpr));
    }
    out << "\"/>\n";
    out << "</svg>\n";
    if (!out) throw IoError("svg_roc_chart: failed writing " + path.string());
}

}  // namespace scalelab
