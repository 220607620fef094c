#include "entmap/error.hpp"
#include "entmap/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace entmap {

namespace {

const char* const kRecordsHeader = "experiment,sweep_value,epsilon,d,replication,metric,value";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw InputError("line " + std::to_string(line) + ": '" + text + "' is not a number");
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

}  // namespace

void write_records_csv(std::ostream& out, const std::vector<Record>& records) {
  out << kRecordsHeader << '\n';
  for (const auto& r : records) {
    out << r.experiment << ',' << num(r.sweep_value) << ',' << num(r.epsilon) << ',' << r.d << ',' << r.replication
        << ',' << r.metric << ',' << num(r.value) << '\n';
  }
}

std::vector<Record> read_records_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InputError("records CSV is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordsHeader) throw InputError("line 1: unexpected records header");
  std::vector<Record> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 7) throw InputError("line " + std::to_string(line_no) + ": expected 7 columns");
    Record r;
    r.experiment = cells[0];
    r.sweep_value = parse_double(cells[1], line_no);
    r.epsilon = parse_double(cells[2], line_no);
    r.d = static_cast<Eigen::Index>(parse_double(cells[3], line_no));
    r.replication = static_cast<std::size_t>(parse_double(cells[4], line_no));
    r.metric = cells[5];
    r.value = parse_double(cells[6], line_no);
    records.push_back(std::move(r));
  }
  return records;
}

void write_summary_csv(std::ostream& out, const ExperimentResult& result) {
  out << "experiment,metric,epsilon,sweep_value,count,mean,std_error,ci_lo,ci_hi,slope,slope_stderr\n";
  for (const auto& s : result.series) {
    for (std::size_t i = 0; i < s.sweep.size(); ++i) {
      out << result.experiment << ',' << s.metric << ',' << num(s.epsilon) << ',' << num(s.sweep[i]) << ','
          << s.count[i] << ',' << num(s.mean[i]) << ',' << num(s.std_error[i]) << ',' << num(s.ci_lo[i]) << ','
          << num(s.ci_hi[i]) << ',' << num(s.fit.slope) << ',' << num(s.fit.std_error) << '\n';
    }
  }
}

void write_svg_plot(std::ostream& out, const ExperimentResult& result, const std::string& title,
                    const std::string& x_label, const std::string& y_label) {
  constexpr double W = 640, H = 440, L = 80, R = 170, T = 40, B = 60;
  static const char* const colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                                       "#e377c2", "#17becf"};
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : result.series) {
    for (std::size_t i = 0; i < s.sweep.size(); ++i) {
      if (!(s.sweep[i] > 0.0) || !(s.mean[i] > 0.0)) continue;
      xmin = std::min(xmin, s.sweep[i]);
      xmax = std::max(xmax, s.sweep[i]);
      const double lo = s.ci_lo[i] > 0.0 ? s.ci_lo[i] : s.mean[i];
      const double hi = s.ci_hi[i] > 0.0 ? s.ci_hi[i] : s.mean[i];
      ymin = std::min(ymin, lo);
      ymax = std::max(ymax, hi);
    }
  }
  const bool empty = !std::isfinite(xmin);
  if (empty) {
    xmin = ymin = 1.0;
    xmax = ymax = 10.0;
  }
  double lx0 = std::floor(std::log10(xmin)), lx1 = std::ceil(std::log10(xmax));
  double ly0 = std::floor(std::log10(ymin)), ly1 = std::ceil(std::log10(ymax));
  if (lx1 <= lx0) lx1 = lx0 + 1;
  if (ly1 <= ly0) ly1 = ly0 + 1;
  const auto px = [&](double x) { return L + (std::log10(x) - lx0) / (lx1 - lx0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (std::log10(y) - ly0) / (ly1 - ly0) * (H - T - B); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" style=\"fill:#ffffff\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" style=\"font-family:sans-serif;font-size:15px;text-anchor:middle\">"
      << xml_escape(title) << "</text>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << (W - L - R) << "\" height=\"" << (H - T - B)
      << "\" style=\"fill:none;stroke:#333333;stroke-width:1\"/>\n";
  for (double e = lx0; e <= lx1 + 1e-9; e += 1) {
    const double x = px(std::pow(10.0, e));
    out << "<line x1=\"" << x << "\" y1=\"" << T << "\" x2=\"" << x << "\" y2=\"" << (H - B)
        << "\" style=\"stroke:#dddddd;stroke-width:1\"/>\n";
    out << "<text x=\"" << x << "\" y=\"" << (H - B + 18)
        << "\" style=\"font-family:sans-serif;font-size:12px;text-anchor:middle\">1e" << e << "</text>\n";
  }
  for (double e = ly0; e <= ly1 + 1e-9; e += 1) {
    const double y = py(std::pow(10.0, e));
    out << "<line x1=\"" << L << "\" y1=\"" << y << "\" x2=\"" << (W - R) << "\" y2=\"" << y
        << "\" style=\"stroke:#dddddd;stroke-width:1\"/>\n";
    out << "<text x=\"" << (L - 6) << "\" y=\"" << (y + 4)
        << "\" style=\"font-family:sans-serif;font-size:12px;text-anchor:end\">1e" << e << "</text>\n";
  }
  out << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 18)
      << "\" style=\"font-family:sans-serif;font-size:13px;text-anchor:middle\">" << xml_escape(x_label)
      << "</text>\n";
  out << "<text x=\"18\" y=\"" << (T + (H - T - B) / 2) << "\" transform=\"rotate(-90 18 " << (T + (H - T - B) / 2)
      << ")\" style=\"font-family:sans-serif;font-size:13px;text-anchor:middle\">" << xml_escape(y_label)
      << "</text>\n";

  for (std::size_t s = 0; s < result.series.size(); ++s) {
    const auto& series = result.series[s];
    const char* color = colors[s % (sizeof(colors) / sizeof(colors[0]))];
    std::ostringstream pts;
    for (std::size_t i = 0; i < series.sweep.size(); ++i) {
      if (!(series.sweep[i] > 0.0) || !(series.mean[i] > 0.0)) continue;
      const double x = px(series.sweep[i]);
      pts << x << ',' << py(series.mean[i]) << ' ';
      if (series.ci_lo[i] > 0.0 && series.ci_hi[i] > 0.0) {
        out << "<line x1=\"" << x << "\" y1=\"" << py(series.ci_lo[i]) << "\" x2=\"" << x << "\" y2=\""
            << py(series.ci_hi[i]) << "\" style=\"stroke:" << color << ";stroke-width:1\"/>\n";
      }
      out << "<circle cx=\"" << x << "\" cy=\"" << py(series.mean[i]) << "\" r=\"3\" style=\"fill:" << color
          << "\"/>\n";
    }
    out << "<polyline points=\"" << pts.str() << "\" style=\"fill:none;stroke:" << color
        << ";stroke-width:2\"/>\n";
    const double ly = T + 16 + 20.0 * static_cast<double>(s);
    std::string label = series.metric + " eps=" + short_num(series.epsilon);
    if (!series.fit.degenerate) label += " slope " + short_num(std::round(series.fit.slope * 1000) / 1000);
    out << "<line x1=\"" << (W - R + 10) << "\" y1=\"" << ly << "\" x2=\"" << (W - R + 30) << "\" y2=\"" << ly
        << "\" style=\"stroke:" << color << ";stroke-width:2\"/>\n";
    out << "<text x=\"" << (W - R + 34) << "\" y=\"" << (ly + 4)
        << "\" style=\"font-family:sans-serif;font-size:11px\">" << xml_escape(label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace entmap
