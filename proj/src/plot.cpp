#include "bifctl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

#include "bifctl/error.hpp"

namespace bifctl {

namespace {

constexpr double kWidth = 640, kHeight = 440, kMargin = 56;

std::vector<std::vector<std::string>> parse_csv(const std::string& csv, std::string& header) {
  std::istringstream in(csv);
  std::vector<std::vector<std::string>> rows;
  if (!std::getline(in, header)) throw InvalidArgument("plot: empty CSV");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

double number(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw InvalidArgument("plot: bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument("plot: bad number '" + s + "'");
  }
}

struct Frame {
  double x0, x1, y0, y1;

  static Frame fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    Frame f{0, 1, 0, 1};
    if (!xs.empty()) {
      f.x0 = *std::min_element(xs.begin(), xs.end());
      f.x1 = *std::max_element(xs.begin(), xs.end());
      f.y0 = *std::min_element(ys.begin(), ys.end());
      f.y1 = *std::max_element(ys.begin(), ys.end());
    }
    if (f.x1 - f.x0 < 1e-12) f.x1 = f.x0 + 1;
    if (f.y1 - f.y0 < 1e-12) f.y1 = f.y0 + 1;
    return f;
  }
  double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
  double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
    << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double x = f.x0 + k * (f.x1 - f.x0) / 4, y = f.y0 + k * (f.y1 - f.y0) / 4;
    s << "<text x=\"" << fmt(f.px(x)) << "\" y=\"" << kHeight - kMargin + 16
      << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n"
      << "<text x=\"" << kMargin - 6 << "\" y=\"" << fmt(f.py(y) + 4)
      << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
  }
  s << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
    << xlabel << "</text>\n"
    << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << kHeight / 2 << ")\">" << ylabel << "</text>\n";
  return s.str();
}

}  // namespace

std::string diagram_svg(const std::string& csv) {
  std::string header;
  const auto rows = parse_csv(csv, header);
  if (header != "branch_id,lambda,diagnostic,is_fold") throw InvalidArgument("plot: not a diagram CSV");
  std::map<int, std::vector<std::pair<double, double>>> branches;
  std::vector<std::pair<double, double>> folds;
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    if (r.size() != 4) throw InvalidArgument("plot: diagram row needs 4 columns");
    const double l = number(r[1]), d = number(r[2]);
    xs.push_back(l);
    ys.push_back(d);
    if (number(r[3]) != 0.0) {
      folds.emplace_back(l, d);
    } else {
      branches[static_cast<int>(number(r[0]))].emplace_back(l, d);
    }
  }
  const Frame f = Frame::fit(xs, ys);
  std::ostringstream s;
  s << axes(f, "lambda", "diagnostic");
  for (const auto& [id, pts] : branches) {
    s << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[id % 10]
      << "\" points=\"";
    for (const auto& [l, d] : pts) s << fmt(f.px(l)) << ',' << fmt(f.py(d)) << ' ';
    s << "\"/>\n";
  }
  for (const auto& [l, d] : folds) {
    s << "<circle cx=\"" << fmt(f.px(l)) << "\" cy=\"" << fmt(f.py(d))
      << "\" r=\"4\" fill=\"none\" stroke=\"black\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string history_svg(const std::string& csv) {
  std::string header;
  const auto rows = parse_csv(csv, header);
  if (header.rfind("iteration,objective,step,accepted", 0) != 0) {
    throw InvalidArgument("plot: not a history CSV");
  }
  std::vector<double> xs, ys;
  std::vector<bool> accepted;
  for (const auto& r : rows) {
    if (r.size() < 4) throw InvalidArgument("plot: history row needs at least 4 columns");
    xs.push_back(number(r[0]));
    ys.push_back(std::log10(std::max(number(r[1]), 1e-300)));
    accepted.push_back(number(r[3]) != 0.0);
  }
  const Frame f = Frame::fit(xs, ys);
  std::ostringstream s;
  s << axes(f, "iteration", "log10 objective");
  s << "<polyline fill=\"none\" stroke=\"" << kPalette[0] << "\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (accepted[i]) s << fmt(f.px(xs[i])) << ',' << fmt(f.py(ys[i])) << ' ';
  }
  s << "\"/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (accepted[i]) continue;
    const double x = f.px(xs[i]), y = f.py(ys[i]);
    s << "<path d=\"M" << fmt(x - 3) << ' ' << fmt(y - 3) << " L" << fmt(x + 3) << ' ' << fmt(y + 3)
      << " M" << fmt(x - 3) << ' ' << fmt(y + 3) << " L" << fmt(x + 3) << ' ' << fmt(y - 3)
      << "\" stroke=\"" << kPalette[1] << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string plot_svg(const std::string& csv) {
  if (csv.rfind("branch_id,", 0) == 0) return diagram_svg(csv);
  return history_svg(csv);
}

}  // namespace bifctl
