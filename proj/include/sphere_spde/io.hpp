#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sphere_spde/analysis.hpp"
#include "sphere_spde/bounds.hpp"
#include "sphere_spde/error.hpp"

// Artifact writers: CSV tables, SVG log-log plots and PPM field images.
// Everything here is a pure function of its arguments so reruns are
// byte-identical.

namespace sphere_spde::io {

/// Round-trip text form of a double: 17 significant digits, '.' decimal point.
/// NaN is written as the empty string (a missing value), infinities as inf / -inf.
[[nodiscard]] inline std::string format_double(double v)
{
    if (std::isnan(v)) {
        return {};
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Short label for file names and legends, e.g. 0.5 -> "0.5".
[[nodiscard]] inline std::string format_short(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path, bool binary = false)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) {
        throw ResourceError("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

inline constexpr const char* curve_csv_header = "sweep_param,value,error,stderr,slope_cum";

/// One row per point: the sweep parameter name, its value, the error, the
/// Monte Carlo standard error (empty for closed forms) and the slope of the
/// fit through all points so far.
inline void write_curve_csv(std::ostream& out, const ErrorCurve& curve)
{
    out << curve_csv_header << '\n';
    const auto slopes = curve.cumulative_slopes();
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out << curve.sweep_param << ',' << format_double(curve.abscissae[i]) << ','
            << format_double(curve.errors[i]) << ',' << format_double(curve.stderrs[i]) << ','
            << format_double(slopes[i]) << '\n';
    }
}

inline void write_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve)
{
    auto out = open_output(path);
    write_curve_csv(out, curve);
}

struct CsvRow {
    std::string sweep_param;
    double value = 0.0;
    double error = 0.0;
    double stderr_value = std::numeric_limits<double>::quiet_NaN();
    double slope_cum = std::numeric_limits<double>::quiet_NaN();
};

/// Reads back a curve CSV; used by tests and by anyone post-processing runs.
[[nodiscard]] inline std::vector<CsvRow> read_curve_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != curve_csv_header) {
        throw ConfigError("curve CSV: unexpected header");
    }
    auto field = [](const std::string& s) {
        return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::strtod(s.c_str(), nullptr);
    };
    std::vector<CsvRow> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        while (cells.size() < 5) {
            cells.emplace_back();
        }
        rows.push_back({cells[0], field(cells[1]), field(cells[2]), field(cells[3]), field(cells[4])});
    }
    return rows;
}

inline constexpr const char* bounds_csv_header = "proposition,variant,mu,lambda_h,k,gap,envelope,ratio";

struct BoundRow {
    std::string proposition;
    std::string variant;
    double mu = 0.0;
    double product = 0.0;
    std::int64_t k = 1;
    double gap = 0.0;
    double envelope = 0.0;
    double ratio = 0.0;
};

inline void write_bounds_csv(std::ostream& out, std::span<const BoundRow> rows)
{
    out << bounds_csv_header << '\n';
    for (const BoundRow& r : rows) {
        out << r.proposition << ',' << r.variant << ',' << format_double(r.mu) << ',' << format_double(r.product)
            << ',' << r.k << ',' << format_double(r.gap) << ',' << format_double(r.envelope) << ','
            << format_double(r.ratio) << '\n';
    }
}

// ---------------------------------------------------------------------------
// SVG

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<double> guide_slopes; ///< reference lines O(x^s), anchored at the first series
    int width = 720;
    int height = 520;
};

namespace detail {
inline std::string xml_escape(const std::string& s)
{
    std::string out;
    for (const char c : s) {
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

inline std::string fixed(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline constexpr std::array<const char*, 8> palette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                       "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

inline bool plottable(double x, double y) { return x > 0.0 && y > 0.0 && std::isfinite(x) && std::isfinite(y); }
} // namespace detail

/// Self-contained log-log plot: frame, decade ticks with labels, one polyline
/// with markers per series, dashed reference-slope guides and a legend.
/// Points with a non-positive coordinate are left out (they have no place on
/// a log axis).
[[nodiscard]] inline std::string render_loglog_svg(std::span<const PlotSeries> series, const PlotOptions& opt)
{
    double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
    for (const PlotSeries& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (detail::plottable(s.x[i], s.y[i])) {
                x_lo = std::min(x_lo, std::log10(s.x[i]));
                x_hi = std::max(x_hi, std::log10(s.x[i]));
                y_lo = std::min(y_lo, std::log10(s.y[i]));
                y_hi = std::max(y_hi, std::log10(s.y[i]));
            }
        }
    }
    const bool empty = !std::isfinite(x_lo);
    if (empty) {
        x_lo = y_lo = 0.0;
        x_hi = y_hi = 1.0;
    }
    x_lo = std::floor(x_lo);
    x_hi = std::max(std::ceil(x_hi), x_lo + 1.0);
    y_lo = std::floor(y_lo);
    y_hi = std::max(std::ceil(y_hi), y_lo + 1.0);

    const double left = 80.0, right = 170.0, top = 40.0, bottom = 60.0;
    const double pw = opt.width - left - right;
    const double ph = opt.height - top - bottom;
    auto px = [&](double lx) { return left + (lx - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double ly) { return top + (y_hi - ly) / (y_hi - y_lo) * ph; };
    using detail::fixed;

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
        << "\" viewBox=\"0 0 " << opt.width << ' ' << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << detail::xml_escape(opt.title) << "</text>\n";

    // decade grid; with few decades also the 2 and 5 multiples as minor ticks
    const int x_decades = static_cast<int>(x_hi - x_lo);
    const int y_decades = static_cast<int>(y_hi - y_lo);
    const int y_label_every = std::max(1, y_decades / 10);
    svg << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
    for (int d = 0; d <= x_decades; ++d) {
        const double x = px(x_lo + d);
        svg << "<line x1=\"" << fixed(x) << "\" y1=\"" << fixed(top) << "\" x2=\"" << fixed(x) << "\" y2=\""
            << fixed(top + ph) << "\"/>\n";
    }
    for (int d = 0; d <= y_decades; ++d) {
        const double y = py(y_lo + d);
        svg << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(y) << "\" x2=\"" << fixed(left + pw)
            << "\" y2=\"" << fixed(y) << "\"/>\n";
    }
    svg << "</g>\n<g stroke=\"black\" stroke-width=\"1\">\n";
    for (int d = 0; d < x_decades; ++d) {
        for (int m = 2; m <= 9; ++m) {
            const double x = px(x_lo + d + std::log10(m));
            svg << "<line x1=\"" << fixed(x) << "\" y1=\"" << fixed(top + ph) << "\" x2=\"" << fixed(x)
                << "\" y2=\"" << fixed(top + ph - 4) << "\"/>\n";
        }
    }
    if (y_decades <= 12) {
        for (int d = 0; d < y_decades; ++d) {
            for (int m = 2; m <= 9; ++m) {
                const double y = py(y_lo + d + std::log10(m));
                svg << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(y) << "\" x2=\"" << fixed(left + 4)
                    << "\" y2=\"" << fixed(y) << "\"/>\n";
            }
        }
    }
    svg << "</g>\n";
    svg << "<rect x=\"" << fixed(left) << "\" y=\"" << fixed(top) << "\" width=\"" << fixed(pw) << "\" height=\""
        << fixed(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int d = 0; d <= x_decades; ++d) {
        svg << "<text x=\"" << fixed(px(x_lo + d)) << "\" y=\"" << fixed(top + ph + 18)
            << "\" text-anchor=\"middle\">1e" << static_cast<int>(x_lo) + d << "</text>\n";
    }
    for (int d = 0; d <= y_decades; d += y_label_every) {
        svg << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(py(y_lo + d) + 4)
            << "\" text-anchor=\"end\">1e" << static_cast<int>(y_lo) + d << "</text>\n";
    }
    svg << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(opt.height - 16.0)
        << "\" text-anchor=\"middle\">" << detail::xml_escape(opt.x_label) << "</text>\n";
    svg << "<text transform=\"translate(18," << fixed(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << detail::xml_escape(opt.y_label) << "</text>\n";

    svg << "<defs><clipPath id=\"plot\"><rect x=\"" << fixed(left) << "\" y=\"" << fixed(top) << "\" width=\""
        << fixed(pw) << "\" height=\"" << fixed(ph) << "\"/></clipPath></defs>\n";

    double legend_y = top + 10;
    auto legend = [&](const std::string& colour, const std::string& label, bool dashed) {
        svg << "<line x1=\"" << fixed(left + pw + 12) << "\" y1=\"" << fixed(legend_y) << "\" x2=\""
            << fixed(left + pw + 36) << "\" y2=\"" << fixed(legend_y) << "\" stroke=\"" << colour
            << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        svg << "<text x=\"" << fixed(left + pw + 42) << "\" y=\"" << fixed(legend_y + 4) << "\">"
            << detail::xml_escape(label) << "</text>\n";
        legend_y += 18;
    };

    // Guides start at the first plotted point of the first series, shifted up by
    // a factor 2 so they do not sit on top of the data.
    if (!empty && !series.empty()) {
        const PlotSeries& s0 = series.front();
        for (std::size_t i = 0; i < s0.x.size(); ++i) {
            if (!detail::plottable(s0.x[i], s0.y[i])) {
                continue;
            }
            const double ax = std::log10(s0.x[i]);
            const double ay = std::log10(s0.y[i]) + std::log10(2.0);
            for (const double slope : opt.guide_slopes) {
                const double bx = x_hi;
                const double by = ay + slope * (bx - ax);
                svg << "<line clip-path=\"url(#plot)\" x1=\"" << fixed(px(ax)) << "\" y1=\"" << fixed(py(ay))
                    << "\" x2=\"" << fixed(px(bx)) << "\" y2=\"" << fixed(py(by))
                    << "\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"6,4\"/>\n";
                legend("#555555", "slope " + format_short(slope), true);
            }
            break;
        }
    }

    for (std::size_t k = 0; k < series.size(); ++k) {
        const PlotSeries& s = series[k];
        const std::string colour = detail::palette[k % detail::palette.size()];
        std::string points;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (detail::plottable(s.x[i], s.y[i])) {
                points += fixed(px(std::log10(s.x[i]))) + "," + fixed(py(std::log10(s.y[i]))) + " ";
            }
        }
        if (!points.empty()) {
            points.pop_back();
            svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"" << points
                << "\"/>\n<g fill=\"" << colour << "\">\n";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (detail::plottable(s.x[i], s.y[i])) {
                    svg << "<circle cx=\"" << fixed(px(std::log10(s.x[i]))) << "\" cy=\""
                        << fixed(py(std::log10(s.y[i]))) << "\" r=\"3\"/>\n";
                }
            }
            svg << "</g>\n";
        }
        legend(colour, s.label, false);
    }
    svg << "</svg>\n";
    return svg.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    auto out = open_output(path, true);
    out << text;
}

// ---------------------------------------------------------------------------
// PPM

enum class Colormap { gray, diverging };

[[nodiscard]] inline const char* to_string(Colormap c) noexcept
{
    return c == Colormap::gray ? "gray" : "diverging";
}

struct ImageRange {
    double min = 0.0;
    double max = 0.0;
};

namespace detail {
inline unsigned char channel(double v)
{
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
}

/// gray: linear from min (black) to max (white). diverging: blue - white - red,
/// symmetric about 0 with the largest magnitude at the ends.
inline std::array<unsigned char, 3> colour(double v, const ImageRange& r, Colormap map)
{
    if (map == Colormap::gray) {
        const double span = r.max - r.min;
        const double t = span > 0.0 ? (v - r.min) / span : 0.5;
        const auto g = channel(255.0 * t);
        return {g, g, g};
    }
    const double scale = std::max(std::abs(r.min), std::abs(r.max));
    const double t = scale > 0.0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
    static constexpr double cold[3] = {59.0, 76.0, 192.0};
    static constexpr double warm[3] = {180.0, 4.0, 38.0};
    const double* end = t < 0.0 ? cold : warm;
    const double a = std::abs(t);
    return {channel(255.0 + a * (end[0] - 255.0)), channel(255.0 + a * (end[1] - 255.0)),
            channel(255.0 + a * (end[2] - 255.0))};
}
} // namespace detail

[[nodiscard]] inline ImageRange value_range(std::span<const double> values)
{
    if (values.empty()) {
        return {};
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
}

/// Binary P6 image of a rows x cols grid of values stored row-major.
inline void write_ppm(std::ostream& out, std::span<const double> values, std::size_t rows, std::size_t cols,
                      Colormap map, const ImageRange& range)
{
    if (values.size() != rows * cols) {
        throw DomainError("write_ppm: value count does not match the grid");
    }
    out << "P6\n" << cols << ' ' << rows << "\n255\n";
    std::vector<unsigned char> bytes;
    bytes.reserve(values.size() * 3);
    for (const double v : values) {
        const auto c = detail::colour(v, range, map);
        bytes.insert(bytes.end(), c.begin(), c.end());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace sphere_spde::io
