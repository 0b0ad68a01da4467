#pragma once

// Minimal SVG line charts for optional plot output: polylines over an axis
// box with tick labels.  No external renderer; the files open in any
// browser.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mfpca/errors.hpp"
#include "mfpca/io.hpp"

namespace mfpca {

class SvgChart {
public:
    SvgChart(std::string title, int width = 760, int height = 420)
        : title_(std::move(title)), width_(width), height_(height) {}

    void add_series(const std::vector<double>& x, const std::vector<double>& y,
                    const std::string& color, const std::string& label = {},
                    double stroke_width = 1.5) {
        if (x.size() != y.size() || x.empty())
            throw ShapeError("chart series needs matching non-empty x and y");
        series_.push_back({x, y, color, label, stroke_width});
    }

    void write(const std::filesystem::path& path) const {
        if (series_.empty()) throw InvalidArgument("chart has no series");
        double xmin = std::numeric_limits<double>::infinity();
        double xmax = -xmin;
        double ymin = xmin;
        double ymax = -xmin;
        for (const Series& s : series_)
            for (std::size_t k = 0; k < s.x.size(); ++k) {
                xmin = std::min(xmin, s.x[k]);
                xmax = std::max(xmax, s.x[k]);
                ymin = std::min(ymin, s.y[k]);
                ymax = std::max(ymax, s.y[k]);
            }
        if (xmax <= xmin) xmax = xmin + 1.0;
        if (ymax <= ymin) {
            ymin -= 0.5;
            ymax += 0.5;
        }
        const double pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;

        const double L = 62.0;
        const double R = 16.0;
        const double Tm = 34.0;
        const double Bm = 42.0;
        const double pw = width_ - L - R;
        const double ph = height_ - Tm - Bm;
        auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
        auto py = [&](double y) {
            return Tm + (ymax - y) / (ymax - ymin) * ph;
        };
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4g", v);
            return std::string(buf);
        };

        std::string svg;
        svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
               std::to_string(width_) + "\" height=\"" +
               std::to_string(height_) + "\" font-family=\"sans-serif\">\n";
        svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        svg += "<text x=\"" + std::to_string(width_ / 2) +
               "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title_ +
               "</text>\n";
        svg += "<rect x=\"" + num(L) + "\" y=\"" + num(Tm) + "\" width=\"" +
               num(pw) + "\" height=\"" + num(ph) +
               "\" fill=\"none\" stroke=\"#444\"/>\n";
        for (int k = 0; k <= 4; ++k) {
            const double xv = xmin + k * (xmax - xmin) / 4.0;
            const double yv = ymin + k * (ymax - ymin) / 4.0;
            svg += "<text x=\"" + num(px(xv)) + "\" y=\"" +
                   num(height_ - Bm + 16.0) +
                   "\" text-anchor=\"middle\" font-size=\"11\">" + num(xv) +
                   "</text>\n";
            svg += "<text x=\"" + num(L - 6.0) + "\" y=\"" + num(py(yv) + 4.0) +
                   "\" text-anchor=\"end\" font-size=\"11\">" + num(yv) +
                   "</text>\n";
            if (k > 0 && k < 4) {
                svg += "<line x1=\"" + num(px(xv)) + "\" y1=\"" + num(Tm) +
                       "\" x2=\"" + num(px(xv)) + "\" y2=\"" +
                       num(height_ - Bm) +
                       "\" stroke=\"#ddd\" stroke-dasharray=\"3,3\"/>\n";
                svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(py(yv)) +
                       "\" x2=\"" + num(width_ - R) + "\" y2=\"" +
                       num(py(yv)) +
                       "\" stroke=\"#ddd\" stroke-dasharray=\"3,3\"/>\n";
            }
        }
        double legend_y = Tm + 14.0;
        for (const Series& s : series_) {
            svg += "<polyline fill=\"none\" stroke=\"" + s.color +
                   "\" stroke-width=\"" + num(s.stroke_width) + "\" points=\"";
            for (std::size_t k = 0; k < s.x.size(); ++k) {
                svg += num(px(s.x[k])) + "," + num(py(s.y[k]));
                if (k + 1 < s.x.size()) svg += ' ';
            }
            svg += "\"/>\n";
            if (!s.label.empty()) {
                svg += "<line x1=\"" + num(L + pw - 130.0) + "\" y1=\"" +
                       num(legend_y - 4.0) + "\" x2=\"" + num(L + pw - 110.0) +
                       "\" y2=\"" + num(legend_y - 4.0) + "\" stroke=\"" +
                       s.color + "\" stroke-width=\"2\"/>\n";
                svg += "<text x=\"" + num(L + pw - 104.0) + "\" y=\"" +
                       num(legend_y) + "\" font-size=\"11\">" + s.label +
                       "</text>\n";
                legend_y += 15.0;
            }
        }
        svg += "</svg>\n";
        atomic_write_text(path, svg);
    }

private:
    struct Series {
        std::vector<double> x;
        std::vector<double> y;
        std::string color;
        std::string label;
        double stroke_width;
    };

    std::string title_;
    int width_;
    int height_;
    std::vector<Series> series_;
};

}  // namespace mfpca
