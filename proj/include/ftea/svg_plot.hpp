#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ftea {

struct Series {
    std::string label;
    std::vector<double> values;
};

// Minimal static charts for batch reports.
void write_line_chart_svg(const std::filesystem::path& path, const std::string& title,
                          const std::vector<Series>& series);
void write_bar_chart_svg(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& labels, const std::vector<double>& values);

}  // namespace ftea
