#pragma once

// Experiment outputs: CSV tables, SVG line plots and heatmaps, and a JSON
// summary, written to an output directory by emit_report.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace hk {

using Cell = std::variant<double, std::int64_t, std::string>;

struct Table {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
  std::string to_csv() const;
};

struct Series {
  std::string label;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  bool points = false;  // draw markers instead of a polyline
};

struct LinePlot {
  std::string name;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

struct Heatmap {
  std::string name;
  std::string title;
  Eigen::MatrixXd values;
};

struct Report {
  std::string experiment;
  std::vector<Table> tables;
  std::vector<LinePlot> plots;
  std::vector<Heatmap> heatmaps;
  nlohmann::json summary = nlohmann::json::object();

  const Table* find_table(const std::string& name) const;
};

struct Manifest {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> omitted;  // sections with no content, by name
};

// Writes <name>.csv per table, <name>.svg per plot and heatmap, summary.json
// and manifest.json. Sections without content are skipped and listed in
// Manifest::omitted. I/O failures are rethrown with the path attached.
Manifest emit_report(const Report& report, const std::filesystem::path& output_dir);

std::string render_line_plot(const LinePlot& plot);
std::string render_heatmap(const Heatmap& map);

// Table with one column per entry of `names`, filled from equal-length vectors.
Table columns_table(const std::string& name, const std::vector<std::string>& names,
                    const std::vector<Eigen::VectorXd>& cols);
// Row-major matrix table with a header row of locations.
Table matrix_table(const std::string& name, const Eigen::MatrixXd& m, const Eigen::VectorXd& locations);

}  // namespace hk
