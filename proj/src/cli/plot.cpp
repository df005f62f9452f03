#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fnode/cli.hpp"

namespace fnode::cli {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double number(const std::string& cell, std::size_t lineno) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(v)) {
    throw UsageError("line " + std::to_string(lineno) + ": '" + cell + "' is not a finite number");
  }
  return v;
}

std::vector<std::vector<std::string>> read_rows(const std::string& text, const std::vector<std::string>& prefix,
                                                std::size_t min_cols, const char* what) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw UsageError(std::string(what) + " CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < min_cols || !std::equal(prefix.begin(), prefix.end(), header.begin())) {
    throw UsageError(std::string(what) + " CSV has an unexpected header");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw UsageError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " columns");
    }
    cells.push_back(std::to_string(lineno));
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Range {
  double lo = INFINITY, hi = -INFINITY;
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void widen() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    } else if (hi - lo < 1e-12) {
      const double pad = std::max(0.5, 0.1 * std::abs(lo));
      lo -= pad;
      hi += pad;
    }
  }
};

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::vector<Series> read_trajectory_csv(const std::string& text, std::size_t dim) {
  if (dim == 0) throw UsageError("value column index starts at 1");
  const auto rows = read_rows(text, {"sample_id", "time"}, 3, "trajectory");
  std::vector<Series> out;
  for (const auto& r : rows) {
    const std::size_t lineno = std::stoul(r.back());
    if (dim + 2 > r.size() - 1) throw UsageError("trajectory CSV has no value_" + std::to_string(dim) + " column");
    const double id = number(r[0], lineno);
    if (id < 0 || id != std::floor(id)) throw UsageError("line " + std::to_string(lineno) + ": bad sample_id");
    const auto sid = static_cast<std::size_t>(id);
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& s) { return s.id == sid; });
    if (it == out.end()) {
      out.push_back({sid, {}, {}});
      it = out.end() - 1;
    }
    it->times.push_back(number(r[1], lineno));
    it->values.push_back(number(r[1 + dim], lineno));
  }
  if (out.empty()) throw UsageError("trajectory CSV holds no rows");
  return out;
}

std::vector<BandRow> read_band_csv(const std::string& text, std::size_t dim) {
  if (dim == 0) throw UsageError("value column index starts at 1");
  const auto rows = read_rows(text, {"time", "dim", "lower", "mean", "upper"}, 5, "band");
  std::vector<BandRow> out;
  for (const auto& r : rows) {
    const std::size_t lineno = std::stoul(r.back());
    if (number(r[1], lineno) != static_cast<double>(dim)) continue;
    BandRow b{number(r[0], lineno), number(r[2], lineno), number(r[3], lineno), number(r[4], lineno)};
    if (b.lower > b.upper) throw UsageError("line " + std::to_string(lineno) + ": band lower bound exceeds upper bound");
    if (!out.empty() && !(b.time > out.back().time)) {
      throw UsageError("line " + std::to_string(lineno) + ": band times must increase");
    }
    out.push_back(b);
  }
  if (out.empty()) throw UsageError("band CSV holds no rows for dimension " + std::to_string(dim));
  return out;
}

std::string render_svg(const std::vector<Series>& series, const std::vector<BandRow>& band, const std::string& title) {
  constexpr double W = 640, H = 400, left = 60, right = 20, top = 30, bottom = 40;
  Range xr, yr;
  for (const auto& s : series) {
    for (double t : s.times) xr.add(t);
    for (double v : s.values) yr.add(v);
  }
  for (const auto& b : band) {
    xr.add(b.time);
    yr.add(b.lower);
    yr.add(b.upper);
  }
  xr.widen();
  yr.widen();
  auto px = [&](double t) { return left + (t - xr.lo) / (xr.hi - xr.lo) * (W - left - right); };
  auto py = [&](double v) { return H - bottom - (v - yr.lo) / (yr.hi - yr.lo) * (H - top - bottom); };
  auto point = [&](double t, double v) { return fmt("%.2f", px(t)) + "," + fmt("%.2f", py(v)); };

  std::string escaped;
  for (char c : title) {
    if (c == '<') escaped += "&lt;";
    else if (c == '>') escaped += "&gt;";
    else if (c == '&') escaped += "&amp;";
    else escaped += c;
  }

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  os << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  if (!escaped.empty()) os << "<text x=\"320\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escaped << "</text>\n";
  if (!band.empty()) {
    os << "<polygon class=\"band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < band.size(); ++i) os << (i ? " " : "") << point(band[i].time, band[i].upper);
    for (std::size_t i = band.size(); i-- > 0;) os << ' ' << point(band[i].time, band[i].lower);
    os << "\"/>\n";
    os << "<polyline class=\"band-mean\" fill=\"none\" stroke=\"#1f77b4\" stroke-dasharray=\"4 2\" points=\"";
    for (std::size_t i = 0; i < band.size(); ++i) os << (i ? " " : "") << point(band[i].time, band[i].mean);
    os << "\"/>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double t = xr.lo + (xr.hi - xr.lo) * i / 5.0;
    const double v = yr.lo + (yr.hi - yr.lo) * i / 5.0;
    os << "<text x=\"" << fmt("%.2f", px(t)) << "\" y=\"" << H - bottom + 16
       << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt("%.3g", t) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.2f", py(v) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << fmt("%.3g", v) << "</text>\n";
  }
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 6 << "\" text-anchor=\"middle\" font-size=\"12\">time</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << "<polyline class=\"sample\" fill=\"none\" stroke=\"" << kPalette[k % std::size(kPalette)]
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].times.size(); ++i) os << (i ? " " : "") << point(series[k].times[i], series[k].values[i]);
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace fnode::cli
