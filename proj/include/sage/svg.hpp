// Copyright 2026 The SAGE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal standalone-SVG emitters for the diagnostic figures: line charts
// with an optional shaded interval, stacked latency bars, and violin-style
// binned density polygons.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sage/common.hpp"
#include "sage/serialize.hpp"

namespace sage {

namespace svg_detail {

inline std::string esc(const std::string& s) {
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

inline std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

inline const char* kPalette[] = {"#4878cf", "#d65f5f", "#59a14f", "#b07aa1",
                                 "#e49444", "#76b7b2", "#937860", "#bab0ac"};

struct Frame {
  double width = 640, height = 400;
  double ml = 64, mr = 16, mt = 36, mb = 44;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double px(double x) const {
    return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr);
  }
  double py(double y) const {
    return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
  }
};

inline void open_svg(std::string& s, const Frame& f, const std::string& title) {
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) +
       "\" height=\"" + num(f.height) + "\" viewBox=\"0 0 " + num(f.width) +
       " " + num(f.height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"14\">" + esc(title) +
       "</text>\n";
}

inline void axes(std::string& s, const Frame& f, const std::string& xlabel,
                 const std::string& ylabel) {
  s += "<line x1=\"" + num(f.ml) + "\" y1=\"" + num(f.height - f.mb) +
       "\" x2=\"" + num(f.width - f.mr) + "\" y2=\"" + num(f.height - f.mb) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(f.ml) + "\" y1=\"" + num(f.mt) + "\" x2=\"" +
       num(f.ml) + "\" y2=\"" + num(f.height - f.mb) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double tx = f.x_min + (f.x_max - f.x_min) * i / 4.0;
    double ty = f.y_min + (f.y_max - f.y_min) * i / 4.0;
    s += "<text x=\"" + num(f.px(tx)) + "\" y=\"" + num(f.height - f.mb + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"10\">" + num(tx) + "</text>\n";
    s += "<text x=\"" + num(f.ml - 6) + "\" y=\"" + num(f.py(ty) + 3) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" +
         num(ty) + "</text>\n";
  }
  s += "<text x=\"" + num((f.ml + f.width - f.mr) / 2) + "\" y=\"" +
       num(f.height - 8) + "\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"11\">" + esc(xlabel) +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + num((f.mt + f.height - f.mb) / 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
       "transform=\"rotate(-90 14 " + num((f.mt + f.height - f.mb) / 2) +
       ")\">" + esc(ylabel) + "</text>\n";
}

}  // namespace svg_detail

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Line chart; `shade` marks an x-interval (e.g. a corruption window).
inline void svg_line_chart(const std::filesystem::path& path,
                           const std::string& title, const std::string& xlabel,
                           const std::string& ylabel,
                           const std::vector<SvgSeries>& series,
                           const double* shade_lo = nullptr,
                           const double* shade_hi = nullptr) {
  using namespace svg_detail;
  Frame f;
  bool any = false;
  for (const auto& sr : series) {
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (!any) {
        f.x_min = f.x_max = sr.x[i];
        f.y_min = f.y_max = sr.y[i];
        any = true;
      }
      f.x_min = std::min(f.x_min, sr.x[i]);
      f.x_max = std::max(f.x_max, sr.x[i]);
      f.y_min = std::min(f.y_min, sr.y[i]);
      f.y_max = std::max(f.y_max, sr.y[i]);
    }
  }
  if (!any) throw ConfigError("svg_line_chart: no data");
  if (f.x_max == f.x_min) f.x_max = f.x_min + 1;
  if (f.y_max == f.y_min) f.y_max = f.y_min + 1;
  double pad = 0.05 * (f.y_max - f.y_min);
  f.y_min -= pad;
  f.y_max += pad;

  std::string s;
  open_svg(s, f, title);
  if (shade_lo != nullptr && shade_hi != nullptr) {
    s += "<rect x=\"" + num(f.px(*shade_lo)) + "\" y=\"" + num(f.mt) +
         "\" width=\"" + num(f.px(*shade_hi) - f.px(*shade_lo)) +
         "\" height=\"" + num(f.height - f.mt - f.mb) +
         "\" fill=\"#f0c0c0\" opacity=\"0.5\"/>\n";
  }
  axes(s, f, xlabel, ylabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    std::string pts;
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      pts += num(f.px(sr.x[i])) + "," + num(f.py(sr.y[i])) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" +
         std::string(kPalette[k % 8]) + "\" stroke-width=\"1.5\" points=\"" +
         pts + "\"/>\n";
    s += "<text x=\"" + num(f.width - f.mr - 4) + "\" y=\"" +
         num(f.mt + 14 + 14 * static_cast<double>(k)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"" + kPalette[k % 8] + "\">" + esc(sr.name) + "</text>\n";
  }
  s += "</svg>\n";
  write_text_file(path, s);
}

// Stacked horizontal bars (latency decomposition).
inline void svg_stacked_bars(const std::filesystem::path& path,
                             const std::string& title,
                             const std::vector<std::string>& bars,
                             const std::vector<std::string>& stages,
                             const std::vector<std::vector<double>>& values,
                             const std::string& unit) {
  using namespace svg_detail;
  Frame f;
  f.height = 90.0 + 40.0 * static_cast<double>(bars.size());
  double vmax = 1e-12;
  for (const auto& row : values) {
    double sum = 0.0;
    for (double v : row) sum += v;
    vmax = std::max(vmax, sum);
  }
  std::string s;
  open_svg(s, f, title);
  double x0 = f.ml, x1 = f.width - f.mr - 120;
  for (std::size_t b = 0; b < bars.size(); ++b) {
    double y = f.mt + 14 + 40.0 * static_cast<double>(b);
    double acc = 0.0;
    for (std::size_t st = 0; st < stages.size(); ++st) {
      double w = values[b][st] / vmax * (x1 - x0);
      s += "<rect x=\"" + num(x0 + acc) + "\" y=\"" + num(y) + "\" width=\"" +
           num(w) + "\" height=\"24\" fill=\"" + kPalette[st % 8] + "\"/>\n";
      acc += w;
    }
    s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y + 16) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         esc(bars[b]) + "</text>\n";
    double total = 0.0;
    for (double v : values[b]) total += v;
    s += "<text x=\"" + num(x0 + acc + 6) + "\" y=\"" + num(y + 16) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + num(total) + " " +
         esc(unit) + "</text>\n";
  }
  for (std::size_t st = 0; st < stages.size(); ++st) {
    double y = f.mt + 14 + 16.0 * static_cast<double>(st);
    s += "<rect x=\"" + num(f.width - f.mr - 108) + "\" y=\"" + num(y) +
         "\" width=\"10\" height=\"10\" fill=\"" + kPalette[st % 8] + "\"/>\n";
    s += "<text x=\"" + num(f.width - f.mr - 94) + "\" y=\"" + num(y + 9) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + esc(stages[st]) +
         "</text>\n";
  }
  s += "</svg>\n";
  write_text_file(path, s);
}

// Violin plot: per group, a binned density polygon of the samples.
inline void svg_violins(const std::filesystem::path& path,
                        const std::string& title,
                        const std::vector<std::string>& groups,
                        const std::vector<std::vector<double>>& samples,
                        const std::string& ylabel) {
  using namespace svg_detail;
  if (groups.empty() || groups.size() != samples.size()) {
    throw ConfigError("svg_violins: group/sample mismatch");
  }
  Frame f;
  f.x_min = 0;
  f.x_max = static_cast<double>(groups.size());
  bool any = false;
  for (const auto& g : samples) {
    for (double v : g) {
      if (!any) {
        f.y_min = f.y_max = v;
        any = true;
      }
      f.y_min = std::min(f.y_min, v);
      f.y_max = std::max(f.y_max, v);
    }
  }
  if (!any) throw ConfigError("svg_violins: no data");
  if (f.y_max == f.y_min) {
    f.y_min -= 1;
    f.y_max += 1;
  }
  double pad = 0.08 * (f.y_max - f.y_min);
  f.y_min -= pad;
  f.y_max += pad;

  std::string s;
  open_svg(s, f, title);
  axes(s, f, "", ylabel);
  // Zero reference line.
  if (f.y_min < 0.0 && f.y_max > 0.0) {
    s += "<line x1=\"" + num(f.ml) + "\" y1=\"" + num(f.py(0)) + "\" x2=\"" +
         num(f.width - f.mr) + "\" y2=\"" + num(f.py(0)) +
         "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  }
  const int bins = 24;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> hist(bins, 0.0);
    for (double v : samples[g]) {
      int b = static_cast<int>((v - f.y_min) / (f.y_max - f.y_min) * bins);
      b = std::clamp(b, 0, bins - 1);
      hist[static_cast<std::size_t>(b)] += 1.0;
    }
    double hmax = 1e-12;
    for (double h : hist) hmax = std::max(hmax, h);
    double cx = f.px(static_cast<double>(g) + 0.5);
    double half_w = 0.42 * (f.px(1) - f.px(0));
    std::string right, left;
    for (int b = 0; b < bins; ++b) {
      double y = f.y_min + (f.y_max - f.y_min) * (b + 0.5) / bins;
      double w = hist[static_cast<std::size_t>(b)] / hmax * half_w;
      right += num(cx + w) + "," + num(f.py(y)) + " ";
      left = num(cx - w) + "," + num(f.py(y)) + " " + left;
    }
    s += "<polygon fill=\"" + std::string(kPalette[g % 8]) +
         "\" opacity=\"0.65\" points=\"" + right + left + "\"/>\n";
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(f.height - f.mb + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"10\">" + esc(groups[g]) + "</text>\n";
  }
  s += "</svg>\n";
  write_text_file(path, s);
}

}  // namespace sage
