#pragma once

#include <string>
#include <vector>

#include "fame/types.hpp"

namespace fame {

struct ScatterLayer {
  std::string label;
  std::string color;  // any SVG color
  std::vector<Vector> points;  // first two coordinates are plotted
  double radius = 1.6;
  double opacity = 0.6;
};

// Standalone SVG scatter plot with equal axis scaling and a legend.
std::string scatter_svg(const std::string& title, const std::vector<ScatterLayer>& layers, int width = 520,
                        int height = 520);

// Several plots side by side, sharing one coordinate frame.
std::string scatter_panels_svg(const std::vector<std::string>& titles,
                               const std::vector<std::vector<ScatterLayer>>& panels, int panel_size = 420);

}  // namespace fame
