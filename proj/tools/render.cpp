// SPDX-License-Identifier: Apache-2.0
#include "render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace gridcast::cli {

void write_pgm(const std::string& path, std::size_t height, std::size_t width,
               const std::vector<double>& values) {
  if (values.size() != height * width) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : values) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
  const double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  std::size_t n = 1;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
      lo = std::min(lo, s.y[i] - e);
      hi = std::max(hi, s.y[i] + e);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  lo = std::min(lo, 0.0);
  if (hi <= lo) hi = lo + 1.0;
  auto X = [&](double i) { return left + (n == 1 ? 0.5 : (i / double(n - 1))) * pw; };
  auto Y = [&](double v) { return top + (1.0 - (v - lo) / (hi - lo)) * ph; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(W) + "\" height=\"" +
                  px(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  s += "<rect x=\"" + px(left) + "\" y=\"" + px(top) + "\" width=\"" + px(pw) + "\" height=\"" +
       px(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s += "<line x1=\"" + px(left - 4) + "\" x2=\"" + px(left) + "\" y1=\"" + px(Y(v)) + "\" y2=\"" +
         px(Y(v)) + "\" stroke=\"black\"/>";
    s += "<text x=\"" + px(left - 6) + "\" y=\"" + px(Y(v) + 4) + "\" text-anchor=\"end\">" + fmt(v) + "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, n / 10);
  for (std::size_t i = 0; i < n; i += step) {
    s += "<text x=\"" + px(X(double(i))) + "\" y=\"" + px(top + ph + 16) +
         "\" text-anchor=\"middle\">" + std::to_string(i + 1) + "</text>\n";
  }
  s += "<text x=\"" + px(left + pw / 2) + "\" y=\"" + px(H - 12) + "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  s += "<text x=\"16\" y=\"" + px(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       px(top + ph / 2) + ")\">" + y_label + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    const std::string color = kColors[k % (sizeof kColors / sizeof *kColors)];
    std::string path;
    bool pen = false;
    for (std::size_t i = 0; i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) {
        pen = false;
        continue;
      }
      path += (pen ? " L" : " M") + px(X(double(i))) + " " + px(Y(sr.y[i]));
      pen = true;
      if (i < sr.err.size() && std::isfinite(sr.err[i]) && sr.err[i] > 0) {
        s += "<line x1=\"" + px(X(double(i))) + "\" x2=\"" + px(X(double(i))) + "\" y1=\"" +
             px(Y(sr.y[i] - sr.err[i])) + "\" y2=\"" + px(Y(sr.y[i] + sr.err[i])) +
             "\" stroke=\"" + color + "\" stroke-opacity=\"0.5\"/>\n";
      }
    }
    if (!path.empty()) {
      s += "<path d=\"" + path.substr(1) + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    }
    const double ly = top + 14 + 18.0 * double(k);
    s += "<line x1=\"" + px(left + pw + 10) + "\" x2=\"" + px(left + pw + 30) + "\" y1=\"" + px(ly - 4) +
         "\" y2=\"" + px(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>";
    s += "<text x=\"" + px(left + pw + 36) + "\" y=\"" + px(ly) + "\">" + sr.label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace gridcast::cli
