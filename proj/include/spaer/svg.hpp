#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

// Standalone SVG plots with a fixed 800 x 600 viewBox. A line plot holds one
// <polyline class="series"> per series; a box plot holds one <g class="box">
// per group. Titles and labels are <text> elements.

namespace spaer::svg {

inline constexpr int kWidth = 800;
inline constexpr int kHeight = 600;

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

namespace detail {

inline constexpr double kLeft = 80, kRight = 170, kTop = 50, kBottom = 70;
inline const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish() {
        if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
        if (hi - lo < 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

struct Frame {
    Range x, y;
    [[nodiscard]] double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
    [[nodiscard]] double py(double v) const { return kHeight - kBottom - (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom); }
};

inline std::string header(const std::string& title) {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n"
           "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n"
           "<text class=\"title\" x=\"400\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">" +
           escape(title) + "</text>\n";
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel, bool x_ticks) {
    std::string s;
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    s += "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) + "\"/>\n";
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n";
    s += "</g>\n<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
        s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + tick(yv) + "</text>\n";
        if (x_ticks) {
            const double xv = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
            s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" + tick(xv) + "</text>\n";
        }
    }
    s += "</g>\n";
    s += "<text class=\"xlabel\" x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - 20.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + escape(xlabel) + "</text>\n";
    s += "<text class=\"ylabel\" x=\"20\" y=\"" + num((y0 + y1) / 2) + "\" transform=\"rotate(-90 20 " + num((y0 + y1) / 2) +
         ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + escape(ylabel) + "</text>\n";
    return s;
}

} // namespace detail

/// Line plot, one polyline per series. Points with a non-finite coordinate are skipped.
inline std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series) {
    detail::Frame f;
    for (const auto& s : series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                f.x.add(s.x[i]);
                f.y.add(s.y[i]);
            }
    f.x.finish();
    f.y.finish();
    std::string out = detail::header(title) + detail::axes(f, xlabel, ylabel, true);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = detail::kPalette[k % std::size(detail::kPalette)];
        std::string pts;
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!pts.empty()) pts += ' ';
            pts += detail::num(f.px(s.x[i])) + "," + detail::num(f.py(s.y[i]));
        }
        out += "<polyline class=\"series\" data-name=\"" + escape(s.name) + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = detail::kTop + 20.0 * static_cast<double>(k);
        out += "<g class=\"legend\"><line x1=\"645\" y1=\"" + detail::num(ly) + "\" x2=\"665\" y2=\"" + detail::num(ly) +
               "\" stroke=\"" + color + "\" stroke-width=\"2\"/><text x=\"670\" y=\"" + detail::num(ly + 4) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(s.name) + "</text></g>\n";
    }
    return out + "</svg>\n";
}

struct BoxStats {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quartiles by linear interpolation between order statistics; non-finite values ignored.
inline BoxStats box_stats(std::vector<double> v) {
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
    BoxStats b;
    if (v.empty()) return b;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(i);
        return i + 1 < v.size() ? v[i] + frac * (v[i + 1] - v[i]) : v[i];
    };
    b = {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
    return b;
}

/// Box plot (min, quartiles, max), one box per group.
inline std::string box_plot(const std::string& title, const std::string& ylabel,
                            const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
    detail::Frame f;
    f.x.lo = 0.0;
    f.x.hi = static_cast<double>(std::max<std::size_t>(groups.size(), 1));
    for (const auto& [name, values] : groups)
        for (double v : values) f.y.add(v);
    f.y.finish();
    std::string out = detail::header(title) + detail::axes(f, "", ylabel, false);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const BoxStats b = box_stats(groups[g].second);
        const char* color = detail::kPalette[g % std::size(detail::kPalette)];
        const double cx = f.px(static_cast<double>(g) + 0.5);
        const double half = std::min(40.0, 0.3 * (f.px(1.0) - f.px(0.0)));
        out += "<g class=\"box\" data-name=\"" + escape(groups[g].first) + "\" stroke=\"" + color + "\" fill=\"none\" stroke-width=\"2\">\n";
        out += "<line x1=\"" + detail::num(cx) + "\" y1=\"" + detail::num(f.py(b.min)) + "\" x2=\"" + detail::num(cx) +
               "\" y2=\"" + detail::num(f.py(b.q1)) + "\"/>\n";
        out += "<line x1=\"" + detail::num(cx) + "\" y1=\"" + detail::num(f.py(b.q3)) + "\" x2=\"" + detail::num(cx) +
               "\" y2=\"" + detail::num(f.py(b.max)) + "\"/>\n";
        out += "<rect x=\"" + detail::num(cx - half) + "\" y=\"" + detail::num(f.py(b.q3)) + "\" width=\"" +
               detail::num(2 * half) + "\" height=\"" + detail::num(f.py(b.q1) - f.py(b.q3)) + "\"/>\n";
        out += "<line x1=\"" + detail::num(cx - half) + "\" y1=\"" + detail::num(f.py(b.median)) + "\" x2=\"" +
               detail::num(cx + half) + "\" y2=\"" + detail::num(f.py(b.median)) + "\"/>\n";
        out += "</g>\n<text x=\"" + detail::num(cx) + "\" y=\"" + detail::num(kHeight - detail::kBottom + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape(groups[g].first) + "</text>\n";
    }
    return out + "</svg>\n";
}

} // namespace spaer::svg
