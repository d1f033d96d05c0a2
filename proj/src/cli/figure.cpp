#include "strtf/cli/figure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "strtf/io.hpp"

namespace strtf::cli {

namespace {

constexpr double kWidth = 760.0;
constexpr double kPanelHeight = 240.0;
constexpr double kTitleHeight = 36.0;
constexpr double kLeft = 72.0;
constexpr double kRight = 170.0;
constexpr double kTop = 28.0;
constexpr double kBottom = 44.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

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

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  [[nodiscard]] bool valid() const { return lo <= hi; }
  void pad() {
    if (!valid()) {
      lo = 0.0;
      hi = 1.0;
    } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      const double d = std::max(0.5, std::abs(hi) * 0.1);
      lo -= d;
      hi += d;
    }
  }
};

/// Roughly five ticks at 1/2/5 multiples of a power of ten.
std::vector<double> nice_ticks(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (raw <= step) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
    ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return ticks;
}

std::string tick_label(double v) { return fmt::format("{:.4g}", v); }

void render_panel(std::string& svg, const Panel& panel, double top) {
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kPanelHeight - kTop - kBottom;
  const double x0 = kLeft;
  const double y0 = top + kTop;

  auto transform_y = [&](double v) { return panel.log_y ? std::log10(v) : v; };
  auto usable = [&](double v) { return std::isfinite(v) && (!panel.log_y || v > 0.0); };

  Range xr, yr;
  for (const Series& s : panel.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i])) continue;
      xr.add(s.x[i]);
      yr.add(transform_y(s.y[i]));
    }
  }
  xr.pad();
  yr.pad();
  auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * plot_w; };
  auto py = [&](double v) { return y0 + plot_h - (v - yr.lo) / (yr.hi - yr.lo) * plot_h; };

  svg += fmt::format(R"svg(<text x="{:.1f}" y="{:.1f}" font-size="13" font-weight="bold">{}</text>)svg",
                     x0, top + 18.0, escape(panel.title));
  svg += '\n';
  svg += fmt::format(
      R"svg(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="none" stroke="#444"/>)svg", x0,
      y0, plot_w, plot_h);
  svg += '\n';

  for (double t : nice_ticks(xr.lo, xr.hi)) {
    const double x = px(t);
    svg += fmt::format(
        R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{0:.1f}" y2="{2:.1f}" stroke="#ddd"/><text x="{0:.1f}" y="{3:.1f}" font-size="10" text-anchor="middle">{4}</text>)svg",
        x, y0, y0 + plot_h, y0 + plot_h + 14.0, tick_label(t));
    svg += '\n';
  }
  std::vector<double> yticks;
  if (panel.log_y) {
    for (double e = std::ceil(yr.lo); e <= std::floor(yr.hi); e += 1.0) yticks.push_back(e);
    if (yticks.size() < 2) yticks = nice_ticks(yr.lo, yr.hi);
  } else {
    yticks = nice_ticks(yr.lo, yr.hi);
  }
  for (double t : yticks) {
    const double y = py(t);
    const std::string label = panel.log_y ? tick_label(std::pow(10.0, t)) : tick_label(t);
    svg += fmt::format(
        R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{2:.1f}" y2="{1:.1f}" stroke="#ddd"/><text x="{3:.1f}" y="{4:.1f}" font-size="10" text-anchor="end">{5}</text>)svg",
        x0, y, x0 + plot_w, x0 - 6.0, y + 3.5, label);
    svg += '\n';
  }
  svg += fmt::format(R"svg(<text x="{:.1f}" y="{:.1f}" font-size="11" text-anchor="middle">{}</text>)svg",
                     x0 + plot_w / 2.0, y0 + plot_h + 32.0, escape(panel.x_label));
  svg += '\n';
  svg += fmt::format(
      R"svg(<text x="{0:.1f}" y="{1:.1f}" font-size="11" text-anchor="middle" transform="rotate(-90 {0:.1f} {1:.1f})">{2}</text>)svg",
      x0 - 50.0, y0 + plot_h / 2.0, escape(panel.y_label + (panel.log_y ? " (log)" : "")));
  svg += '\n';

  for (std::size_t k = 0; k < panel.series.size(); ++k) {
    const Series& s = panel.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !usable(s.y[i])) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(transform_y(s.y[i])));
    }
    if (!points.empty()) {
      points.pop_back();
      svg += fmt::format(
          R"svg(<polyline fill="none" stroke="{}" stroke-width="1.4" points="{}"/>)svg", color, points);
      svg += '\n';
    }
    const double ly = y0 + 10.0 + 16.0 * static_cast<double>(k);
    svg += fmt::format(
        R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{2:.1f}" y2="{1:.1f}" stroke="{3}" stroke-width="2"/><text x="{4:.1f}" y="{5:.1f}" font-size="11">{6}</text>)svg",
        x0 + plot_w + 12.0, ly, x0 + plot_w + 32.0, color, x0 + plot_w + 38.0, ly + 4.0,
        escape(s.name));
    svg += '\n';
  }
}

}  // namespace

std::string render_svg(const Figure& figure) {
  const double height = kTitleHeight + kPanelHeight * static_cast<double>(figure.panels.size());
  std::string svg = fmt::format(
      R"svg(<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0f}" height="{1:.0f}" viewBox="0 0 {0:.0f} {1:.0f}" font-family="sans-serif">)svg",
      kWidth, height);
  svg += '\n';
  svg += fmt::format(R"svg(<rect width="{:.0f}" height="{:.0f}" fill="white"/>)svg", kWidth, height);
  svg += '\n';
  svg += fmt::format(R"svg(<text x="{:.1f}" y="24" font-size="16" font-weight="bold" text-anchor="middle">{}</text>)svg",
                     kWidth / 2.0, escape(figure.title));
  svg += '\n';
  for (std::size_t p = 0; p < figure.panels.size(); ++p) {
    render_panel(svg, figure.panels[p], kTitleHeight + kPanelHeight * static_cast<double>(p));
  }
  svg += "</svg>\n";
  return svg;
}

std::string figure_csv(const Figure& figure) {
  std::string out = "panel,series,x,y\n";
  for (const Panel& p : figure.panels) {
    for (const Series& s : p.series) {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        out += fmt::format("{},{},{},{}\n", csv_field(p.title), csv_field(s.name),
                           format_double(s.x[i]), format_double(s.y[i]));
      }
    }
  }
  return out;
}

}  // namespace strtf::cli
