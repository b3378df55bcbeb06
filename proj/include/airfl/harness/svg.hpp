#pragma once

// Minimal self-contained SVG line charts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "airfl/common.hpp"

namespace airfl::harness {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool right_axis = false;
};

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}
inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}
}  // namespace detail

/// Series flagged `right_axis` get their own y-range on the right-hand side.
inline std::string render_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                     const std::string& ylabel_right, const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, left = 70, right = 70, top = 40, bottom = 55;
  const double pw = W - left - right, ph = H - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY;
  double ymin[2] = {INFINITY, INFINITY}, ymax[2] = {-INFINITY, -INFINITY};
  for (const auto& s : series) {
    const int ax = s.right_axis ? 1 : 0;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin[ax] = std::min(ymin[ax], s.y[i]);
      ymax[ax] = std::max(ymax[ax], s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  for (int ax = 0; ax < 2; ++ax) {
    if (!std::isfinite(ymin[ax])) ymin[ax] = 0, ymax[ax] = 1;
    if (ymax[ax] == ymin[ax]) ymax[ax] = ymin[ax] + (ymin[ax] == 0 ? 1 : std::abs(ymin[ax]) * 0.1);
    const double pad = 0.05 * (ymax[ax] - ymin[ax]);
    ymin[ax] -= pad;
    ymax[ax] += pad;
  }
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y, int ax) { return top + ph - (y - ymin[ax]) / (ymax[ax] - ymin[ax]) * ph; };

  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W) + "\" height=\"" + detail::fmt(H) +
       "\" viewBox=\"0 0 " + detail::fmt(W) + " " + detail::fmt(H) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::fmt(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
       detail::escape(title) + "</text>\n";
  o += "<rect x=\"" + detail::fmt(left) + "\" y=\"" + detail::fmt(top) + "\" width=\"" + detail::fmt(pw) +
       "\" height=\"" + detail::fmt(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";

  // ticks
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    o += "<text x=\"" + detail::fmt(px(fx)) + "\" y=\"" + detail::fmt(top + ph + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + detail::fmt(fx) + "</text>\n";
    for (int ax = 0; ax < 2; ++ax) {
      const double fy = ymin[ax] + (ymax[ax] - ymin[ax]) * i / 5.0;
      const double tx = ax == 0 ? left - 6 : left + pw + 6;
      o += "<text x=\"" + detail::fmt(tx) + "\" y=\"" + detail::fmt(py(fy, ax) + 4) + "\" text-anchor=\"" +
           (ax == 0 ? "end" : "start") + "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::fmt(fy) +
           "</text>\n";
    }
  }
  o += "<text x=\"" + detail::fmt(left + pw / 2) + "\" y=\"" + detail::fmt(H - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + detail::escape(xlabel) + "</text>\n";
  o += "<text transform=\"translate(16," + detail::fmt(top + ph / 2) +
       ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + detail::escape(ylabel) +
       "</text>\n";
  if (!ylabel_right.empty())
    o += "<text transform=\"translate(" + detail::fmt(W - 12) + "," + detail::fmt(top + ph / 2) +
         ") rotate(90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         detail::escape(ylabel_right) + "</text>\n";

  int legend = 0;
  for (const auto& s : series) {
    const int ax = s.right_axis ? 1 : 0;
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += detail::fmt(px(s.x[i])) + "," + detail::fmt(py(s.y[i], ax)) + " ";
    }
    o += "<g class=\"series\" data-name=\"" + detail::escape(s.name) + "\">\n";
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      o += "<circle cx=\"" + detail::fmt(px(s.x[i])) + "\" cy=\"" + detail::fmt(py(s.y[i], ax)) + "\" r=\"3\" fill=\"" +
           s.color + "\"/>\n";
    }
    o += "</g>\n";
    const double ly = top + 14 + 16 * legend++;
    o += "<line x1=\"" + detail::fmt(left + 10) + "\" y1=\"" + detail::fmt(ly) + "\" x2=\"" + detail::fmt(left + 30) +
         "\" y2=\"" + detail::fmt(ly) + "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + detail::fmt(left + 35) + "\" y=\"" + detail::fmt(ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::escape(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

}  // namespace airfl::harness
