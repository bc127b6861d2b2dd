#include "humankernel/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "humankernel/format.hpp"
#include "humankernel/responses.hpp"

namespace hk {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;

const std::array<const char*, 10> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
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

std::string csv_cell(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  const std::string& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string num(double v) { return format_short(v, 6); }

// Roughly five round tick values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  const double step = (r < 1.5 ? 1.0 : r < 3.0 ? 2.0 : r < 7.0 ? 5.0 : 10.0) * mag;
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step)
    ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return ticks;
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

// Maps a scalar in [0, 1] onto a blue-to-yellow ramp.
std::string ramp_color(double t) {
  static const std::array<std::array<double, 3>, 5> anchors = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (anchors.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), anchors.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[8];
  int rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<int>(std::lround(anchors[i][c] * (1 - f) + anchors[i + 1][c] * f));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

void svg_open(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
}

void write_text(const fs::path& path, const std::string& text) {
  try {
    write_file_atomic(path, text);
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot write " + path.string() + ": " + e.what());
  }
}

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw std::invalid_argument("table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                                std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + csv_cell(columns[i]);
  out += '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + csv_cell(r[i]);
    out += '\n';
  }
  return out;
}

const Table* Report::find_table(const std::string& name) const {
  for (const auto& t : tables)
    if (t.name == name) return &t;
  return nullptr;
}

Table columns_table(const std::string& name, const std::vector<std::string>& names,
                    const std::vector<Eigen::VectorXd>& cols) {
  if (names.size() != cols.size()) throw std::invalid_argument("columns_table: names and columns differ in count");
  Table t{name, names, {}};
  const Eigen::Index n = cols.empty() ? 0 : cols.front().size();
  for (const auto& c : cols)
    if (c.size() != n) throw std::invalid_argument("columns_table: columns differ in length");
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Cell> row;
    for (const auto& c : cols) row.emplace_back(c[i]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table matrix_table(const std::string& name, const Eigen::MatrixXd& m, const Eigen::VectorXd& locations) {
  if (m.cols() != locations.size()) throw std::invalid_argument("matrix_table: locations do not match the columns");
  Table t{name, {}, {}};
  for (double l : locations) t.columns.push_back(format_double(l));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<Cell> row;
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.emplace_back(m(i, j));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string render_line_plot(const LinePlot& plot) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot " + plot.name + ": series x and y differ in length");
    for (Eigen::Index i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  const Range xr = padded(xlo, xhi);
  Range yr = padded(ylo, yhi);
  const double ypad = 0.05 * (yr.hi - yr.lo);
  yr = {yr.lo - ypad, yr.hi + ypad};
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream s;
  svg_open(s, plot.title);
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double t : nice_ticks(xr.lo, xr.hi)) {
    s << "<line x1=\"" << num(px(t)) << "\" y1=\"" << kTop + ph << "\" x2=\"" << num(px(t)) << "\" y2=\""
      << kTop + ph + 5 << "\" stroke=\"#333\"/>";
    s << "<text x=\"" << num(px(t)) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << format_short(t)
      << "</text>\n";
  }
  for (double t : nice_ticks(yr.lo, yr.hi)) {
    s << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << num(py(t)) << "\" x2=\"" << kLeft << "\" y2=\"" << num(py(t))
      << "\" stroke=\"#333\"/>";
    s << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\">" << format_short(t)
      << "</text>\n";
  }
  s << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(plot.x_label) << "</text>\n";
  s << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(plot.y_label) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const Series& ser = plot.series[k];
    const char* color = kPalette[k % kPalette.size()];
    if (ser.points) {
      for (Eigen::Index i = 0; i < ser.x.size(); ++i)
        if (std::isfinite(ser.y[i]))
          s << "<circle cx=\"" << num(px(ser.x[i])) << "\" cy=\"" << num(py(ser.y[i])) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
    } else {
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (Eigen::Index i = 0; i < ser.x.size(); ++i)
        if (std::isfinite(ser.y[i])) s << num(px(ser.x[i])) << "," << num(py(ser.y[i])) << " ";
      s << "\"/>\n";
    }
    const double ly = kTop + 12 + 16 * static_cast<double>(k);
    s << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"3\" fill=\"" << color
      << "\"/>";
    s << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << ly << "\">" << xml_escape(ser.label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_heatmap(const Heatmap& map) {
  const Eigen::MatrixXd& v = map.values;
  const double lo = v.size() ? v.minCoeff() : 0.0;
  const double hi = v.size() ? v.maxCoeff() : 1.0;
  const double span = hi > lo ? hi - lo : 1.0;
  const double side = std::min(kWidth - kLeft - kRight, kHeight - kTop - kBottom);
  const double cw = v.cols() ? side / static_cast<double>(v.cols()) : side;
  const double ch = v.rows() ? side / static_cast<double>(v.rows()) : side;

  std::ostringstream s;
  svg_open(s, map.title);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      s << "<rect x=\"" << num(kLeft + j * cw) << "\" y=\"" << num(kTop + i * ch) << "\" width=\"" << num(cw + 0.05)
        << "\" height=\"" << num(ch + 0.05) << "\" fill=\"" << ramp_color((v(i, j) - lo) / span) << "\"/>\n";
  // colour bar
  const double bx = kLeft + side + 30;
  for (int k = 0; k < 50; ++k)
    s << "<rect x=\"" << bx << "\" y=\"" << num(kTop + side * (49 - k) / 50.0) << "\" width=\"16\" height=\""
      << num(side / 50.0 + 0.05) << "\" fill=\"" << ramp_color(k / 49.0) << "\"/>\n";
  s << "<text x=\"" << bx + 22 << "\" y=\"" << kTop + 8 << "\">" << format_short(hi) << "</text>\n";
  s << "<text x=\"" << bx + 22 << "\" y=\"" << kTop + side << "\">" << format_short(lo) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

Manifest emit_report(const Report& report, const fs::path& output_dir) {
  try {
    fs::create_directories(output_dir);
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot create " + output_dir.string() + ": " + e.what());
  }
  Manifest m;
  for (const auto& t : report.tables) {
    if (t.rows.empty()) {
      m.omitted.push_back(t.name + ".csv");
      continue;
    }
    const fs::path p = output_dir / (t.name + ".csv");
    write_text(p, t.to_csv());
    m.written.push_back(p);
  }
  for (const auto& p : report.plots) {
    const bool empty = std::all_of(p.series.begin(), p.series.end(), [](const Series& s) { return s.x.size() == 0; });
    if (empty) {
      m.omitted.push_back(p.name + ".svg");
      continue;
    }
    const fs::path path = output_dir / (p.name + ".svg");
    write_text(path, render_line_plot(p));
    m.written.push_back(path);
  }
  for (const auto& h : report.heatmaps) {
    if (h.values.size() == 0) {
      m.omitted.push_back(h.name + ".svg");
      continue;
    }
    const fs::path path = output_dir / (h.name + ".svg");
    write_text(path, render_heatmap(h));
    m.written.push_back(path);
  }
  const fs::path summary = output_dir / "summary.json";
  nlohmann::json js = report.summary;
  js["experiment"] = report.experiment;
  write_text(summary, js.dump(2) + "\n");
  m.written.push_back(summary);

  nlohmann::json mj;
  mj["experiment"] = report.experiment;
  mj["written"] = nlohmann::json::array();
  for (const auto& p : m.written) mj["written"].push_back(p.filename().string());
  mj["written"].push_back("manifest.json");
  mj["omitted"] = m.omitted;
  const fs::path manifest = output_dir / "manifest.json";
  write_text(manifest, mj.dump(2) + "\n");
  m.written.push_back(manifest);
  return m;
}

}  // namespace hk
