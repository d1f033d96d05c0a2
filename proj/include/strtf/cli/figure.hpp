#pragma once

#include <string>
#include <vector>

namespace strtf::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // nonpositive points are dropped from the drawing
  std::vector<Series> series;
};

/// Stacked line-chart panels sharing one SVG.
struct Figure {
  std::string title;
  std::vector<Panel> panels;
};

std::string render_svg(const Figure& figure);

/// Long format: panel,series,x,y with every point of every series.
std::string figure_csv(const Figure& figure);

}  // namespace strtf::cli
