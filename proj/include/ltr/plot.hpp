// SPDX-License-Identifier: Apache-2.0
/**
 * @file   plot.hpp
 * @brief  Minimal static SVG charts: multi-series line plots and bar charts.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace ltr::plot {

struct Series {
  std::string name;
  std::vector<double> x, y; ///< NaN in y leaves a gap
};

namespace detail {

inline constexpr const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string &s) {
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

struct Frame {
  double w = 640, h = 400, left = 64, right = 150, top = 40, bottom = 48;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline std::string header(const Frame &f, const std::string &title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.w) + "\" height=\"" + num(f.h) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" "
         "fill=\"white\"/>\n<text x=\"" + num(f.w / 2) + "\" y=\"22\" text-anchor=\"middle\" "
         "font-size=\"15\">" + escape(title) + "</text>\n";
}

inline std::string axes(const Frame &f, const std::string &xlabel, const std::string &ylabel,
                        bool x_ticks = true) {
  std::string s;
  const double bx = f.left, by = f.h - f.bottom, ex = f.w - f.right, ey = f.top;
  s += "<path d=\"M" + num(bx) + " " + num(ey) + " L" + num(bx) + " " + num(by) + " L" + num(ex) +
       " " + num(by) + "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 5.0;
    const double y = f.py(yv);
    s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(y) + "\" x2=\"" + num(ex) + "\" y2=\"" + num(y) +
         "\" stroke=\"#e0e0e0\"/>\n<text x=\"" + num(bx - 6) + "\" y=\"" + num(y + 4) +
         "\" text-anchor=\"end\">" + tick(yv) + "</text>\n";
    if (x_ticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 5.0;
      s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(by + 16) + "\" text-anchor=\"middle\">" +
           tick(xv) + "</text>\n";
    }
  }
  s += "<text x=\"" + num((bx + ex) / 2) + "\" y=\"" + num(f.h - 10) + "\" text-anchor=\"middle\">" +
       escape(xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((by + ey) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num((by + ey) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

} // namespace detail

inline std::string line_chart(const std::string &title, const std::string &xlabel,
                              const std::string &ylabel, const std::vector<Series> &series) {
  detail::Frame f;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto &s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]))
        continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  }
  if (xmax == xmin)
    xmax = xmin + 1;
  if (ymax == ymin)
    ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  f.x0 = xmin, f.x1 = xmax, f.y0 = ymin - pad, f.y1 = ymax + pad;

  std::string svg = detail::header(f, title) + detail::axes(f, xlabel, ylabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto &s = series[k];
    const char *color = detail::kPalette[k % std::size(detail::kPalette)];
    std::string d;
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        pen = false;
        continue;
      }
      d += (pen ? " L" : " M") + detail::num(f.px(s.x[i])) + " " + detail::num(f.py(s.y[i]));
      pen = true;
    }
    if (!d.empty())
      svg += "<path d=\"" + d + "\" stroke=\"" + color + "\" stroke-width=\"1.8\" fill=\"none\"/>\n";
    const double ly = f.top + 10 + 18.0 * static_cast<double>(k);
    const double lx = f.w - f.right + 12;
    svg += "<line x1=\"" + detail::num(lx) + "\" y1=\"" + detail::num(ly) + "\" x2=\"" +
           detail::num(lx + 20) + "\" y2=\"" + detail::num(ly) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n<text x=\"" + detail::num(lx + 26) + "\" y=\"" +
           detail::num(ly + 4) + "\">" + detail::escape(s.name) + "</text>\n";
  }
  return svg + "</svg>\n";
}

inline std::string bar_chart(const std::string &title, const std::string &ylabel,
                             const std::vector<std::string> &labels, const std::vector<double> &values) {
  detail::Frame f;
  f.right = 24;
  f.bottom = 90;
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo)
    hi = lo + 1;
  f.x0 = 0, f.x1 = std::max<double>(1.0, static_cast<double>(values.size()));
  f.y0 = lo, f.y1 = hi + 0.05 * (hi - lo);

  std::string svg = detail::header(f, title) + detail::axes(f, "", ylabel, false);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = f.px(static_cast<double>(i) + 0.15);
    const double bw = f.px(static_cast<double>(i) + 0.85) - x;
    const double ytop = f.py(std::max(values[i], 0.0));
    const double ybot = f.py(std::min(values[i], 0.0));
    svg += "<rect x=\"" + detail::num(x) + "\" y=\"" + detail::num(ytop) + "\" width=\"" +
           detail::num(bw) + "\" height=\"" + detail::num(ybot - ytop) + "\" fill=\"" +
           detail::kPalette[0] + "\"/>\n";
    const double cx = x + bw / 2, cy = f.h - f.bottom + 12;
    svg += "<text x=\"" + detail::num(cx) + "\" y=\"" + detail::num(cy) +
           "\" text-anchor=\"end\" transform=\"rotate(-40 " + detail::num(cx) + " " + detail::num(cy) +
           ")\">" + detail::escape(i < labels.size() ? labels[i] : std::string()) + "</text>\n";
  }
  return svg + "</svg>\n";
}

} // namespace ltr::plot
