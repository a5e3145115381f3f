#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "edukd/metrics.hpp"

namespace edukd {

inline std::string format_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Stage x subset table in the style of a forgetting matrix: one row per
// stage end, '/' where the subset has not been introduced yet.
inline std::string render_forgetting_table(const ForgettingMatrix& m,
                                           const std::string& title) {
  std::string out = "# " + title + "\n\n";
  out += "| Stage |";
  for (int t = 1; t <= m.T; ++t) out += concat(" Sub-dataset ", t, " |");
  out += "\n|---|";
  for (int t = 1; t <= m.T; ++t) out += "---|";
  out += "\n";
  for (int s = 1; s <= m.T; ++s) {
    out += concat("| Stage ", s, " (epoch ", m.stage_end_epochs[s - 1], ") |");
    for (int t = 1; t <= m.T; ++t) {
      const auto& cell = m.rows[s - 1][t - 1];
      out += cell ? concat(" ", format_pct(*cell), " |") : " / |";
    }
    out += "\n";
  }
  return out;
}

// Reads back a table produced by render_forgetting_table.
inline ForgettingMatrix parse_forgetting_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_run("cannot open forgetting table '", path, "'");
  std::vector<std::vector<std::string>> cell_rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] != '|') continue;
    if (line.find("---") != std::string::npos) continue;
    std::vector<std::string> cells;
    std::size_t pos = 1;
    while (pos < line.size()) {
      const std::size_t next = line.find('|', pos);
      if (next == std::string::npos) break;
      std::string cell = line.substr(pos, next - pos);
      const auto a = cell.find_first_not_of(' ');
      const auto b = cell.find_last_not_of(' ');
      cells.push_back(a == std::string::npos
                          ? std::string()
                          : cell.substr(a, b - a + 1));
      pos = next + 1;
    }
    cell_rows.push_back(cells);
  }
  if (cell_rows.size() < 2) fail_run("forgetting table '", path, "' is empty");
  ForgettingMatrix m;
  m.T = static_cast<int>(cell_rows[0].size()) - 1;
  m.rows.assign(m.T, std::vector<std::optional<double>>(m.T));
  m.stage_end_epochs.assign(m.T, -1);
  for (int s = 1; s <= m.T; ++s) {
    const auto& cells = cell_rows[s];
    const std::string& head = cells[0];
    const auto epos = head.find("epoch ");
    if (epos != std::string::npos)
      m.stage_end_epochs[s - 1] = std::stoi(head.substr(epos + 6));
    for (int t = 1; t <= m.T; ++t)
      if (cells[t] != "/") m.rows[s - 1][t - 1] = std::stod(cells[t]);
  }
  m.check_occupancy();
  return m;
}

struct Series {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

// Minimal SVG line chart with vertical markers at the stage-advance epochs.
inline std::string render_svg_chart(const std::string& title,
                                    const Series& series,
                                    const std::vector<int>& advance_epochs,
                                    double x_max, double y_max = 100.0) {
  const int w = 640, h = 400, ml = 50, mr = 15, mt = 35, mb = 40;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto sx = [&](double x) { return ml + (x_max > 0 ? x / x_max * pw : 0); };
  auto sy = [&](double y) { return mt + ph - y / y_max * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  for (int g = 0; g <= 5; ++g) {
    const double y = y_max * g / 5.0;
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << sy(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"10\">" << format_pct(y) << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"11\">epoch</text>\n";
  for (int e : advance_epochs)
    svg << "<line x1=\"" << sx(e) << "\" y1=\"" << mt << "\" x2=\"" << sx(e)
        << "\" y2=\"" << mt + ph
        << "\" stroke=\"gray\" stroke-dasharray=\"4 3\" "
           "data-advance-epoch=\"" << e << "\"/>\n";
  if (!series.xs.empty()) {
    svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" "
           "points=\"";
    for (std::size_t i = 0; i < series.xs.size(); ++i)
      svg << sx(series.xs[i]) << "," << sy(series.ys[i]) << " ";
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

struct ReportPaths {
  std::string metrics_export;
  std::string forgetting_table;
  std::vector<std::string> plots;  // overall first, then one per subset
};

// Writes the delimited metrics export, the forgetting table and the
// accuracy-vs-epoch plots (overall + one per subset) under out_dir.
inline ReportPaths render_report(const std::vector<MetricsRecord>& records,
                                 const ForgettingMatrix& matrix,
                                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ReportPaths paths;

  paths.metrics_export = out_dir + "/metrics.tsv";
  {
    std::ofstream out(paths.metrics_export, std::ios::binary);
    if (!out) fail_run("cannot write '", paths.metrics_export, "'");
    out << metrics_header() << "\n";
    for (const auto& r : records) out << format_record(r) << "\n";
  }

  paths.forgetting_table = out_dir + "/forgetting.md";
  {
    std::ofstream out(paths.forgetting_table, std::ios::binary);
    out << render_forgetting_table(matrix,
                                   "Per-sub-dataset accuracy at stage ends");
  }

  std::vector<int> advance_epochs;
  double x_max = 1;
  for (const auto& r : records) {
    if (r.metric == "event_advance")
      advance_epochs.push_back(r.epoch);
    x_max = std::max(x_max, double(r.epoch));
  }

  auto collect = [&](int subset) {
    Series s;
    s.label = subset == 0 ? "overall" : concat("subset ", subset);
    for (const auto& r : records)
      if (r.split == "test" && r.metric == "top1" && r.subset_id == subset) {
        s.xs.push_back(r.epoch);
        s.ys.push_back(r.value);
      }
    return s;
  };

  auto write_plot = [&](const std::string& name, const Series& s) {
    const std::string path = out_dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    out << render_svg_chart("top-1 accuracy: " + s.label, s, advance_epochs,
                            x_max);
    paths.plots.push_back(path);
  };

  write_plot("accuracy_overall.svg", collect(0));
  for (int t = 1; t <= matrix.T; ++t)
    write_plot(concat("accuracy_subset", t, ".svg"), collect(t));
  return paths;
}

}  // namespace edukd
