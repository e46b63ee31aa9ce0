#pragma once

#include <string>
#include <vector>

namespace eqsae::report {

// Minimal deterministic CSV/SVG emission. Numbers are formatted with fixed
// printf patterns so identical data produces identical bytes.

std::string format_double(double v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::string& path, const Table& table);
Table read_csv(const std::string& path);

// Grouped bar chart; one group per row label, one bar per series. Bars carry
// data-series/data-group/data-value attributes for round-trip checks.
void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::vector<std::string>& groups,
                         const std::vector<std::string>& series,
                         const std::vector<std::vector<double>>& values);

// Scatter plot; points carry data-label/data-x/data-y attributes.
struct ScatterPoint {
  std::string label;
  double x = 0.0;
  double y = 0.0;
};
void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<ScatterPoint>& points);

// Histogram; bars carry data-bin-low/high/count attributes.
void write_histogram_svg(const std::string& path, const std::string& title,
                         const std::vector<double>& bin_edges,
                         const std::vector<std::size_t>& counts);

// Pulls numeric data-* attribute values back out of an SVG, in document
// order; used by tests to confirm the figures render the same numbers as
// the CSVs.
std::vector<double> extract_svg_data(const std::string& path, const std::string& attribute);

}  // namespace eqsae::report
