#pragma once

// Minimal standalone SVG line charts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eqps/errors.hpp"

namespace eqps::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<double> reference_x;  // dashed vertical line
  double width = 640;
  double height = 420;
};

namespace detail {
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % 8];
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}
}  // namespace detail

inline void write(std::ostream& out, const Chart& c) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : c.series) {
    if (s.x.size() != s.y.size()) throw ValidationError("svg: series '" + s.label + "' has unequal lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) throw ValidationError("svg: nothing to plot");
  if (c.reference_x) {
    x0 = std::min(x0, *c.reference_x);
    x1 = std::max(x1, *c.reference_x);
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double left = 70, right = 160, top = 40, bottom = 55;
  const double pw = c.width - left - right;
  const double ph = c.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  using detail::num;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(c.width) << "\" height=\""
      << num(c.height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << num(c.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::escape(c.title) << "</text>\n";
  out << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw)
      << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    out << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + ph + 16)
        << "\" text-anchor=\"middle\">" << detail::tick(xv) << "</text>\n";
    out << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(yv) + 4)
        << "\" text-anchor=\"end\">" << detail::tick(yv) << "</text>\n";
  }
  out << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(c.height - 12)
      << "\" text-anchor=\"middle\">" << detail::escape(c.x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << num(top + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(c.y_label) << "</text>\n";
  if (c.reference_x) {
    out << "<line x1=\"" << num(px(*c.reference_x)) << "\" y1=\"" << num(top) << "\" x2=\""
        << num(px(*c.reference_x)) << "\" y2=\"" << num(top + ph)
        << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  }
  for (std::size_t k = 0; k < c.series.size(); ++k) {
    const auto& s = c.series[k];
    out << "<polyline fill=\"none\" stroke=\"" << detail::color(k) << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    out << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\""
        << num(left + pw + 32) << "\" y2=\"" << num(ly) << "\" stroke=\"" << detail::color(k)
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << num(left + pw + 38) << "\" y=\"" << num(ly + 4) << "\">"
        << detail::escape(s.label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace eqps::svg
