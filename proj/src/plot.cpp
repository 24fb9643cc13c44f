#include "spaigen/plot.hpp"

#include "spaigen/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace spaigen {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 80, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Axis range padded so single points and flat series still get a visible span.
std::pair<double, double> padded(double lo, double hi) {
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    const double d = std::max(std::abs(hi) * 0.1, 0.5);
    return {lo - d, hi + d};
  }
  const double d = 0.05 * (hi - lo);
  return {lo - d, hi + d};
}

std::string series_key(const std::string& method) {
  if (method.ends_with("[matched]") || method.ends_with("[unmatched]")) {
    const auto bracket = method.find('[');
    const auto paren = method.find('(');
    return method.substr(0, paren) + method.substr(bracket);
  }
  return method;
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  for (const auto& s : spec.series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y) || (spec.log_y && y <= 0)) continue;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, ty(y));
      y_hi = std::max(y_hi, ty(y));
    }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  std::tie(x_lo, x_hi) = padded(x_lo, x_hi);
  std::tie(y_lo, y_hi) = padded(y_lo, y_hi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (ty(y) - y_lo) / (y_hi - y_lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(spec.title) << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double xv = x_lo + (x_hi - x_lo) * t / 4.0;
    const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
    const double xp = kLeft + pw * t / 4.0, yp = kTop + ph - ph * t / 4.0;
    o << "<line x1=\"" << xp << "\" y1=\"" << kTop + ph << "\" x2=\"" << xp << "\" y2=\""
      << kTop + ph + 5 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << xp << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
      << fmt(xv) << "</text>\n";
    o << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << yp << "\" x2=\"" << kLeft << "\" y2=\"" << yp
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << yp + 4 << "\" text-anchor=\"end\">"
      << fmt(spec.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 15
    << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << kTop + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label)
    << (spec.log_y ? " (log scale)" : "") << "</text>\n";

  for (std::size_t k = 0; k < spec.series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    auto pts = spec.series[k].points;
    std::sort(pts.begin(), pts.end());
    std::string path;
    for (const auto& [x, y] : pts) {
      if (!std::isfinite(x) || !std::isfinite(y) || (spec.log_y && y <= 0)) continue;
      path += (path.empty() ? "M" : " L") + fmt(px(x)) + "," + fmt(py(y));
      o << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3.5\" fill=\""
        << color << "\"/>\n";
    }
    if (!path.empty())
      o << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    const double ly = kTop + 10 + 18.0 * k;
    o << "<line x1=\"" << kLeft + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 32
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\">"
      << escape(spec.series[k].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg(const std::filesystem::path& path, const PlotSpec& spec) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  out << render_svg(spec);
  if (!out) fail(ErrorCategory::io_error, "write failed: " + path.string());
}

std::vector<std::filesystem::path> write_benchmark_plots(const std::vector<BenchmarkRow>& rows,
                                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  // Keep first-seen order of methods so colors are stable.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const BenchmarkRow*>> grouped;
  for (const auto& r : rows) {
    const std::string key = series_key(r.method);
    if (!grouped.count(key)) order.push_back(key);
    grouped[key].push_back(&r);
  }
  auto build = [&](const std::string& title, const std::string& y_label, bool log_y,
                   double BenchmarkRow::*field) {
    PlotSpec spec{title, "n (matrix dimension)", y_label, log_y, {}};
    for (const auto& key : order) {
      PlotSeries s{key, {}};
      for (const BenchmarkRow* r : grouped[key]) s.points.emplace_back(r->n, r->*field);
      spec.series.push_back(std::move(s));
    }
    return spec;
  };
  const std::vector<std::pair<std::string, PlotSpec>> plots = {
      {"iterations_vs_n.svg",
       build("Mean PCG iterations", "mean iterations", false, &BenchmarkRow::mean_iterations)},
      {"condition_vs_n.svg", build("Mean two-sided condition number", "mean condition number",
                                   true, &BenchmarkRow::mean_condition)},
      {"density_vs_n.svg",
       build("Preconditioner density", "nnz / n^2", false, &BenchmarkRow::mean_density)},
  };
  std::vector<std::filesystem::path> written;
  for (const auto& [name, spec] : plots) {
    write_svg(dir / name, spec);
    written.push_back(dir / name);
  }
  return written;
}

}  // namespace spaigen
