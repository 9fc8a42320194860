#include "ftea/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ftea/errors.hpp"

namespace ftea {

namespace {

constexpr int kWidth = 640, kHeight = 360;
constexpr int kMarginLeft = 60, kMarginRight = 20, kMarginTop = 40, kMarginBottom = 40;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range value_range(const std::vector<Series>& series) {
    Range r{1e300, -1e300};
    for (const auto& s : series)
        for (double v : s.values) {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
    if (r.lo > r.hi) return {0.0, 1.0};
    if (r.hi - r.lo < 1e-12) {
        r.lo -= 0.5;
        r.hi += 0.5;
    }
    return r;
}

void open_svg(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
       << " font-size=\"16\">" << title << "</text>\n";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os << content;
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

}  // namespace

void write_line_chart_svg(const std::filesystem::path& path, const std::string& title,
                          const std::vector<Series>& series) {
    const Range range = value_range(series);
    const int plot_w = kWidth - kMarginLeft - kMarginRight;
    const int plot_h = kHeight - kMarginTop - kMarginBottom;
    size_t max_len = 1;
    for (const auto& s : series) max_len = std::max(max_len, s.values.size());

    std::ostringstream os;
    open_svg(os, title);
    os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
       << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
       << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << kMarginTop + 5
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << range.hi
       << "</text>\n";
    os << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << kMarginTop + plot_h + 5
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << range.lo
       << "</text>\n";

    int color = 0;
    for (const auto& s : series) {
        if (s.values.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[color % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.values.size(); ++i) {
            const double x = kMarginLeft + (max_len == 1 ? 0.0
                                                         : static_cast<double>(i) / (max_len - 1) * plot_w);
            const double y = kMarginTop + plot_h -
                             (s.values[i] - range.lo) / (range.hi - range.lo) * plot_h;
            os << x << "," << y << " ";
        }
        os << "\"/>\n";
        os << "<text x=\"" << kMarginLeft + plot_w - 4 << "\" y=\"" << kMarginTop + 16 + 16 * color
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
           << kPalette[color % 6] << "\">" << s.label << "</text>\n";
        ++color;
    }
    os << "</svg>\n";
    write_file(path, os.str());
}

void write_bar_chart_svg(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
    const int plot_w = kWidth - kMarginLeft - kMarginRight;
    const int plot_h = kHeight - kMarginTop - kMarginBottom;
    double hi = 1.0;
    for (double v : values) hi = std::max(hi, v);

    std::ostringstream os;
    open_svg(os, title);
    os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
       << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    const size_t n = values.size();
    const double slot = n ? static_cast<double>(plot_w) / n : plot_w;
    for (size_t i = 0; i < n; ++i) {
        const double bar_h = values[i] / hi * plot_h;
        const double x = kMarginLeft + i * slot + slot * 0.15;
        os << "<rect x=\"" << x << "\" y=\"" << kMarginTop + plot_h - bar_h << "\" width=\""
           << slot * 0.7 << "\" height=\"" << bar_h << "\" fill=\"" << kPalette[i % 6] << "\"/>\n";
        if (i < labels.size())
            os << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kMarginTop + plot_h + 16
               << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
               << labels[i] << "</text>\n";
    }
    os << "</svg>\n";
    write_file(path, os.str());
}

}  // namespace ftea
