#include "eqsae/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace eqsae::report {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

namespace {

std::string svg_escape(const std::string& s) {
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

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_csv(const std::string& path, const Table& table) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out << ",";
    out << table.header[i];
  }
  out << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ",";
      out << row[i];
    }
    out << "\n";
  }
}

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  Table table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  return table;
}

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::vector<std::string>& groups,
                         const std::vector<std::string>& series,
                         const std::vector<std::vector<double>>& values) {
  const double bar_w = 18.0, gap = 14.0;
  const double group_w = bar_w * series.size() + gap;
  const double plot_h = 240.0, left = 60.0, top = 40.0;
  const double width = left + groups.size() * group_w + 40.0;
  const double height = top + plot_h + 70.0;

  auto out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "  <text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n";
  // y axis with 0..1 ticks
  out << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double frac = tick / 4.0;
    const double y = top + plot_h * (1.0 - frac);
    out << "  <line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left
        << "\" y2=\"" << y << "\" stroke=\"black\"/>\n";
    out << "  <text x=\"" << left - 40 << "\" y=\"" << y + 4 << "\" font-size=\"10\">"
        << format_double(frac) << "</text>\n";
  }
  static const char* kColors[] = {"#4C72B0", "#DD8452", "#55A868", "#C44E52",
                                  "#8172B3", "#937860", "#DA8BC3", "#8C8C8C",
                                  "#CCB974"};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + 8.0 + g * group_w;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = values[g][s];
      const double h = plot_h * std::max(0.0, std::min(1.0, v));
      out << "  <rect x=\"" << gx + s * bar_w << "\" y=\"" << top + plot_h - h
          << "\" width=\"" << bar_w - 2 << "\" height=\"" << h << "\" fill=\""
          << kColors[s % 9] << "\" data-group=\"" << svg_escape(groups[g])
          << "\" data-series=\"" << svg_escape(series[s]) << "\" data-value=\""
          << format_double(v) << "\"/>\n";
    }
    out << "  <text x=\"" << gx << "\" y=\"" << top + plot_h + 16
        << "\" font-size=\"11\">" << svg_escape(groups[g]) << "</text>\n";
  }
  // legend
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = top + plot_h + 34 + 12.0 * s;
    out << "  <rect x=\"" << left << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << kColors[s % 9] << "\"/>\n";
    out << "  <text x=\"" << left + 16 << "\" y=\"" << y << "\" font-size=\"10\">"
        << svg_escape(series[s]) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_scatter_svg(const std::string& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<ScatterPoint>& points) {
  const double left = 70.0, top = 40.0, plot_w = 420.0, plot_h = 300.0;
  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  if (!points.empty()) {
    min_x = max_x = points[0].x;
    min_y = max_y = points[0].y;
    for (const auto& p : points) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
  }
  if (max_x == min_x) max_x = min_x + 1.0;
  if (max_y == min_y) max_y = min_y + 1.0;
  const double pad_x = 0.08 * (max_x - min_x), pad_y = 0.08 * (max_y - min_y);
  min_x -= pad_x;
  max_x += pad_x;
  min_y -= pad_y;
  max_y += pad_y;

  auto out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + plot_w + 40
      << "\" height=\"" << top + plot_h + 60 << "\">\n";
  out << "  <text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n";
  out << "  <line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
      << left + plot_w << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "  <text x=\"" << left + plot_w / 2 << "\" y=\"" << top + plot_h + 36
      << "\" font-size=\"11\">" << svg_escape(x_label) << "</text>\n";
  out << "  <text x=\"14\" y=\"" << top + plot_h / 2 << "\" font-size=\"11\">"
      << svg_escape(y_label) << "</text>\n";
  for (const auto& p : points) {
    const double cx = left + plot_w * (p.x - min_x) / (max_x - min_x);
    const double cy = top + plot_h * (1.0 - (p.y - min_y) / (max_y - min_y));
    out << "  <circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"4\" fill=\"#4C72B0\""
        << " data-label=\"" << svg_escape(p.label) << "\" data-x=\"" << format_double(p.x)
        << "\" data-y=\"" << format_double(p.y) << "\"/>\n";
    out << "  <text x=\"" << cx + 6 << "\" y=\"" << cy - 5 << "\" font-size=\"9\">"
        << svg_escape(p.label) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_histogram_svg(const std::string& path, const std::string& title,
                         const std::vector<double>& bin_edges,
                         const std::vector<std::size_t>& counts) {
  if (bin_edges.size() != counts.size() + 1) {
    throw std::runtime_error("histogram: edges must be counts+1");
  }
  const double left = 60.0, top = 40.0, plot_h = 240.0;
  const double bar_w = 420.0 / std::max<std::size_t>(1, counts.size());
  std::size_t max_count = 1;
  for (auto c : counts) max_count = std::max(max_count, c);

  auto out = open_out(path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + 460
      << "\" height=\"" << top + plot_h + 50 << "\">\n";
  out << "  <text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << svg_escape(title)
      << "</text>\n";
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const double h = plot_h * static_cast<double>(counts[b]) / max_count;
    out << "  <rect x=\"" << left + b * bar_w << "\" y=\"" << top + plot_h - h
        << "\" width=\"" << bar_w - 1 << "\" height=\"" << h
        << "\" fill=\"#55A868\" data-bin-low=\"" << format_double(bin_edges[b])
        << "\" data-bin-high=\"" << format_double(bin_edges[b + 1]) << "\" data-count=\""
        << counts[b] << "\"/>\n";
  }
  out << "  <text x=\"" << left << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"10\">"
      << format_double(bin_edges.front()) << "</text>\n";
  out << "  <text x=\"" << left + 420 << "\" y=\"" << top + plot_h + 16
      << "\" font-size=\"10\">" << format_double(bin_edges.back()) << "</text>\n";
  out << "</svg>\n";
}

std::vector<double> extract_svg_data(const std::string& path, const std::string& attribute) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const std::string needle = attribute + "=\"";
  std::vector<double> values;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    pos += needle.size();
    const std::size_t end = text.find('"', pos);
    if (end == std::string::npos) break;
    values.push_back(std::stod(text.substr(pos, end - pos)));
    pos = end;
  }
  return values;
}

}  // namespace eqsae::report
