#pragma once

// Minimal static SVG charts for the report files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace phenoicu::svg {

inline std::string escape(const std::string& s) {
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

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string open(int w, int h, const std::string& title) {
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">" << escape(title) << "</text>\n";
    return o.str();
}

/// Horizontal bars, first label on top.
inline std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<double>& values) {
    const int row = 18, left = 220, width = 640;
    const int h = 40 + row * static_cast<int>(labels.size());
    double vmax = 0.0;
    for (double v : values) vmax = std::max(vmax, std::abs(v));
    if (vmax == 0.0) vmax = 1.0;
    std::string s = open(width, h, title);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = 28 + row * static_cast<int>(i);
        const double len = (width - left - 20) * std::abs(values[i]) / vmax;
        s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(y + 12) + "\" text-anchor=\"end\">" +
             escape(labels[i]) + "</text>\n";
        s += "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(y + 2) + "\" width=\"" + num(len) +
             "\" height=\"" + std::to_string(row - 4) + "\" fill=\"#1f77b4\"/>\n";
    }
    return s + "</svg>\n";
}

struct Series {
    std::string name;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
};

/// Line chart on shared axes; `diagonal` draws y = x.
inline std::string line_chart(const std::string& title, const std::vector<Series>& series, bool diagonal = false,
                              bool markers = false) {
    const int w = 640, h = 400, l = 50, r = 20, t = 30, b = 40;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (diagonal) x0 = y0 = 0.0, x1 = y1 = 1.0;
    if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
    if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
    const auto px = [&](double v) { return l + (w - l - r) * (v - x0) / (x1 - x0); };
    const auto py = [&](double v) { return h - b - (h - t - b) * (v - y0) / (y1 - y0); };
    std::string s = open(w, h, title);
    s += "<rect x=\"" + std::to_string(l) + "\" y=\"" + std::to_string(t) + "\" width=\"" + std::to_string(w - l - r) +
         "\" height=\"" + std::to_string(h - t - b) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    s += "<text x=\"" + std::to_string(l) + "\" y=\"" + std::to_string(h - b + 14) + "\">" + num(x0) + "</text>\n";
    s += "<text x=\"" + std::to_string(w - r) + "\" y=\"" + std::to_string(h - b + 14) + "\" text-anchor=\"end\">" + num(x1) +
         "</text>\n";
    s += "<text x=\"" + std::to_string(l - 4) + "\" y=\"" + std::to_string(h - b) + "\" text-anchor=\"end\">" + num(y0) +
         "</text>\n";
    s += "<text x=\"" + std::to_string(l - 4) + "\" y=\"" + std::to_string(t + 10) + "\" text-anchor=\"end\">" + num(y1) +
         "</text>\n";
    if (diagonal) {
        s += "<line x1=\"" + num(px(0)) + "\" y1=\"" + num(py(0)) + "\" x2=\"" + num(px(1)) + "\" y2=\"" + num(py(1)) +
             "\" stroke=\"#aaa\" stroke-dasharray=\"4 3\"/>\n";
    }
    int legend = 0;
    for (const auto& sr : series) {
        std::string pts;
        for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) pts += num(px(sr.x[i])) + "," + num(py(sr.y[i])) + " ";
        s += "<polyline fill=\"none\" stroke=\"" + sr.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        if (markers) {
            for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
                s += "<circle cx=\"" + num(px(sr.x[i])) + "\" cy=\"" + num(py(sr.y[i])) + "\" r=\"3\" fill=\"" + sr.color +
                     "\"/>\n";
            }
        }
        s += "<text x=\"" + std::to_string(l + 8) + "\" y=\"" + std::to_string(t + 14 + 14 * legend++) + "\" fill=\"" +
             sr.color + "\">" + escape(sr.name) + "</text>\n";
    }
    return s + "</svg>\n";
}

/// Rows x columns of signed values, blue negative and red positive.
inline std::string heatmap(const std::string& title, const std::vector<std::string>& rows,
                           const std::vector<std::string>& cols, const std::vector<std::vector<double>>& values) {
    const int left = 220, cell_h = 16, top = 30;
    const int cell_w = std::max(2, std::min(24, 800 / std::max<int>(1, static_cast<int>(cols.size()))));
    const int w = left + cell_w * static_cast<int>(cols.size()) + 20;
    const int h = top + cell_h * static_cast<int>(rows.size()) + 30;
    double vmax = 0.0;
    for (const auto& r : values) {
        for (double v : r) vmax = std::max(vmax, std::abs(v));
    }
    if (vmax == 0.0) vmax = 1.0;
    std::string s = open(w, h, title);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int y = top + cell_h * static_cast<int>(i);
        s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(y + 12) + "\" text-anchor=\"end\">" +
             escape(rows[i]) + "</text>\n";
        for (std::size_t j = 0; j < cols.size() && j < values[i].size(); ++j) {
            const double a = std::clamp(values[i][j] / vmax, -1.0, 1.0);
            const int shade = static_cast<int>(255 - 200 * std::abs(a));
            char color[16];
            if (a >= 0) std::snprintf(color, sizeof color, "#ff%02x%02x", shade, shade);
            else std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
            s += "<rect x=\"" + std::to_string(left + cell_w * static_cast<int>(j)) + "\" y=\"" + std::to_string(y) +
                 "\" width=\"" + std::to_string(cell_w) + "\" height=\"" + std::to_string(cell_h) + "\" fill=\"" + color +
                 "\"/>\n";
        }
    }
    if (!cols.empty()) {
        const int y = top + cell_h * static_cast<int>(rows.size()) + 14;
        s += "<text x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(y) + "\">" + escape(cols.front()) + "</text>\n";
        s += "<text x=\"" + std::to_string(w - 20) + "\" y=\"" + std::to_string(y) + "\" text-anchor=\"end\">" +
             escape(cols.back()) + "</text>\n";
    }
    return s + "</svg>\n";
}

}  // namespace phenoicu::svg
