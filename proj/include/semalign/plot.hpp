#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "semalign/io.hpp"

namespace semalign {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<std::optional<double>> y;  // missing points leave a gap
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

inline std::string fmt(double v, int prec = 2) {
    char b[32];
    std::snprintf(b, sizeof b, "%.*f", prec, v);
    return b;
}

}  // namespace detail

/// Static SVG line chart with y fixed to [0,1] (every plotted metric is a fraction).
inline std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<Series>& series) {
    constexpr double W = 640, H = 420, L = 70, R = 190, T = 40, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    for (const auto& s : series)
        for (double x : s.x) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return T + (1.0 - y) * ph; };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W, 0) + "\" height=\"" +
                    detail::fmt(H, 0) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + detail::fmt(L + pw / 2, 0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(title) + "</text>\n";
    s += "<rect x=\"" + detail::fmt(L, 0) + "\" y=\"" + detail::fmt(T, 0) + "\" width=\"" + detail::fmt(pw, 0) +
         "\" height=\"" + detail::fmt(ph, 0) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        s += "<line x1=\"" + detail::fmt(L) + "\" x2=\"" + detail::fmt(L + pw) + "\" y1=\"" + detail::fmt(py(v)) +
             "\" y2=\"" + detail::fmt(py(v)) + "\" stroke=\"#ddd\"/>\n";
        s += "<text x=\"" + detail::fmt(L - 6) + "\" y=\"" + detail::fmt(py(v) + 4) + "\" text-anchor=\"end\">" +
             detail::fmt(v, 1) + "</text>\n";
    }
    std::vector<double> ticks;
    for (const auto& sr : series)
        for (double x : sr.x) ticks.push_back(x);
    std::sort(ticks.begin(), ticks.end());
    ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
    for (double x : ticks)
        s += "<text x=\"" + detail::fmt(px(x)) + "\" y=\"" + detail::fmt(T + ph + 18) + "\" text-anchor=\"middle\">" +
             format_real(x) + "</text>\n";
    s += "<text x=\"" + detail::fmt(L + pw / 2) + "\" y=\"" + detail::fmt(H - 18) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(x_label) + "</text>\n";
    s += "<text transform=\"translate(18," + detail::fmt(T + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         detail::xml_escape(y_label) + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const std::string col = colors[k % 8];
        std::string pts;
        auto flush = [&] {
            if (!pts.empty())
                s += "<polyline fill=\"none\" stroke=\"" + col + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
            pts.clear();
        };
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            if (!sr.y[i]) {
                flush();
                continue;
            }
            pts += detail::fmt(px(sr.x[i])) + "," + detail::fmt(py(*sr.y[i])) + " ";
            s += "<circle cx=\"" + detail::fmt(px(sr.x[i])) + "\" cy=\"" + detail::fmt(py(*sr.y[i])) +
                 "\" r=\"3\" fill=\"" + col + "\"/>\n";
        }
        flush();
        const double ly = T + 14 + 18.0 * static_cast<double>(k);
        s += "<line x1=\"" + detail::fmt(L + pw + 12) + "\" x2=\"" + detail::fmt(L + pw + 32) + "\" y1=\"" +
             detail::fmt(ly) + "\" y2=\"" + detail::fmt(ly) + "\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + detail::fmt(L + pw + 36) + "\" y=\"" + detail::fmt(ly + 4) + "\">" +
             detail::xml_escape(sr.label) + "</text>\n";
    }
    return s + "</svg>\n";
}

}  // namespace semalign
