#pragma once

// Deterministic SVG rendering: sample scatter plots and frontier polylines.
// All coordinates are printed with fixed precision so identical inputs give
// byte-identical files.

#include "cdcflow/cli/pipeline.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/types.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cdcflow::cli::svg {

inline std::string fixed(double x, int digits = 2) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed, digits);
  std::string s(buf, res.ptr);
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
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

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                        "#9467bd", "#8c564b", "#e377c2", "#17becf"};

/// Planar view of a point: identity in 2-D, (x, 0) in 1-D, oblique
/// projection of the first three coordinates otherwise.
inline std::array<double, 2> project(const Eigen::Ref<const Vector>& p) {
  if (p.size() == 1) return {p(0), 0.0};
  if (p.size() == 2) return {p(0), p(1)};
  return {p(0) + 0.35 * p(2), p(1) + 0.35 * p(2)};
}

struct Bounds {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -std::numeric_limits<double>::infinity();
  double y0 = x0, y1 = x1;

  void add(double x, double y) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }

  void pad(double frac) {
    if (!(x1 >= x0)) x0 = x1 = 0.0;
    if (!(y1 >= y0)) y0 = y1 = 0.0;
    const double dx = std::max(x1 - x0, 1e-9), dy = std::max(y1 - y0, 1e-9);
    x0 -= frac * dx;
    x1 += frac * dx;
    y0 -= frac * dy;
    y1 += frac * dy;
  }
};

struct Canvas {
  double width = 520, height = 520, margin = 50;
  Bounds b;

  double sx(double x) const { return margin + (x - b.x0) / (b.x1 - b.x0) * (width - 2 * margin); }
  double sy(double y) const { return height - margin - (y - b.y0) / (b.y1 - b.y0) * (height - 2 * margin); }

  std::string header(const std::string& title) const {
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\"" << fixed(height, 0)
      << "\" viewBox=\"0 0 " << fixed(width, 0) << ' ' << fixed(height, 0) << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << fixed(width / 2, 0) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << escape(title) << "</text>\n";
    o << "<rect x=\"" << fixed(margin, 0) << "\" y=\"" << fixed(margin, 0) << "\" width=\"" << fixed(width - 2 * margin, 0)
      << "\" height=\"" << fixed(height - 2 * margin, 0) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    return o.str();
  }

  std::string axes(const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream o;
    for (int i = 0; i <= 4; ++i) {
      const double fx = b.x0 + (b.x1 - b.x0) * i / 4.0, fy = b.y0 + (b.y1 - b.y0) * i / 4.0;
      o << "<text x=\"" << fixed(sx(fx)) << "\" y=\"" << fixed(height - margin + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(fx, 3) << "</text>\n";
      o << "<text x=\"" << fixed(margin - 4) << "\" y=\"" << fixed(sy(fy) + 3)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(fy, 3) << "</text>\n";
    }
    o << "<text x=\"" << fixed(width / 2, 0) << "\" y=\"" << fixed(height - 12, 0)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
    o << "<text x=\"14\" y=\"" << fixed(height / 2, 0) << "\" transform=\"rotate(-90 14 " << fixed(height / 2, 0)
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(ylabel) << "</text>\n";
    return o.str();
  }
};

struct Layer {
  std::string label;
  Matrix points;  // d x n
  std::string color;
  double radius = 1.5;
  double opacity = 0.5;
};

/// Scatter plot of point layers, drawn in order (later layers on top).
inline std::string scatter(const std::vector<Layer>& layers, const std::string& title) {
  Canvas c;
  for (const auto& l : layers)
    for (Index j = 0; j < l.points.cols(); ++j) {
      const auto p = project(l.points.col(j));
      c.b.add(p[0], p[1]);
    }
  c.b.pad(0.05);
  // Equal aspect in data units.
  const double span = std::max(c.b.x1 - c.b.x0, c.b.y1 - c.b.y0);
  const double cx = 0.5 * (c.b.x0 + c.b.x1), cy = 0.5 * (c.b.y0 + c.b.y1);
  c.b = Bounds{cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2};

  std::ostringstream o;
  o << c.header(title) << c.axes("x0", "x1");
  double ly = c.margin + 14;
  for (const auto& l : layers) {
    o << "<g fill=\"" << l.color << "\" fill-opacity=\"" << fixed(l.opacity) << "\">\n";
    for (Index j = 0; j < l.points.cols(); ++j) {
      const auto p = project(l.points.col(j));
      o << "<circle cx=\"" << fixed(c.sx(p[0])) << "\" cy=\"" << fixed(c.sy(p[1])) << "\" r=\"" << fixed(l.radius) << "\"/>\n";
    }
    o << "</g>\n";
    o << "<circle cx=\"" << fixed(c.width - c.margin - 100) << "\" cy=\"" << fixed(ly - 4) << "\" r=\"4\" fill=\"" << l.color
      << "\"/>\n";
    o << "<text x=\"" << fixed(c.width - c.margin - 90) << "\" y=\"" << fixed(ly)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(l.label) << "</text>\n";
    ly += 16;
  }
  o << "</svg>\n";
  return o.str();
}

/// Quality (x) against a generalisation measure (y): one polyline per method,
/// vertices ordered by epoch.
inline std::string frontier(const std::vector<FrontierPoint>& points, const std::string& y_field) {
  if (y_field != "nll" && y_field != "memorised_pct") throw ConfigError("frontier y axis must be nll or memorised_pct");
  std::vector<std::string> methods;
  std::map<std::string, std::vector<std::pair<std::int64_t, std::array<double, 2>>>> series;
  for (const auto& p : points) {
    const std::optional<double> y = y_field == "nll" ? p.nll : std::optional<double>(p.memorised_pct);
    if (!p.quality || !y) continue;
    if (!series.count(p.method)) methods.push_back(p.method);
    series[p.method].push_back({p.epoch, {*p.quality, *y}});
  }
  if (series.empty()) throw ConfigError("frontier CSV has no rows with both quality and " + y_field);
  Canvas c;
  c.width = 640;
  for (const auto& [m, s] : series)
    for (const auto& [e, xy] : s) c.b.add(xy[0], xy[1]);
  c.b.pad(0.08);

  std::ostringstream o;
  o << c.header("generalisation against quality") << c.axes("quality (distance to manifold)", y_field);
  double ly = c.margin + 14;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    auto s = series[methods[k]];
    std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const char* color = kPalette[k % kPalette.size()];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.size(); ++i)
      o << (i ? " " : "") << fixed(c.sx(s[i].second[0])) << ',' << fixed(c.sy(s[i].second[1]));
    o << "\"/>\n";
    for (const auto& [e, xy] : s)
      o << "<circle cx=\"" << fixed(c.sx(xy[0])) << "\" cy=\"" << fixed(c.sy(xy[1])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    o << "<line x1=\"" << fixed(c.width - c.margin - 190) << "\" y1=\"" << fixed(ly - 4) << "\" x2=\""
      << fixed(c.width - c.margin - 172) << "\" y2=\"" << fixed(ly - 4) << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << fixed(c.width - c.margin - 166) << "\" y=\"" << fixed(ly)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(methods[k]) << "</text>\n";
    ly += 16;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace cdcflow::cli::svg
