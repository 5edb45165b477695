#include "fame/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "fame/error.hpp"

namespace fame {

namespace {

struct Frame {
  double x0, y0, scale;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

Frame fit_frame(const std::vector<std::vector<ScatterLayer>>& panels, double extent) {
  double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
  double lo_y = lo_x, hi_y = -lo_x;
  for (const auto& layers : panels) {
    for (const auto& layer : layers) {
      for (const auto& p : layer.points) {
        if (p.size() < 2) fail(ErrorKind::invalid_argument, "scatter plots need at least two coordinates");
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
        lo_x = std::min(lo_x, p[0]);
        hi_x = std::max(hi_x, p[0]);
        lo_y = std::min(lo_y, p[1]);
        hi_y = std::max(hi_y, p[1]);
      }
    }
  }
  if (!std::isfinite(lo_x)) {
    lo_x = lo_y = -1.0;
    hi_x = hi_y = 1.0;
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9}) * 1.1;
  const double cx = 0.5 * (lo_x + hi_x);
  const double cy = 0.5 * (lo_y + hi_y);
  return {cx - 0.5 * span, cy + 0.5 * span, extent / span};
}

void draw_panel(std::ostringstream& out, const std::string& title, const std::vector<ScatterLayer>& layers,
                const Frame& frame, double ox, double size) {
  constexpr double kTop = 28.0;
  out << "<g transform=\"translate(" << num(ox) << ",0)\">\n";
  out << "<rect x=\"0\" y=\"" << kTop << "\" width=\"" << num(size) << "\" height=\"" << num(size)
      << "\" fill=\"white\" stroke=\"#999\"/>\n";
  out << "<text x=\"" << num(size / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
  for (const auto& layer : layers) {
    out << "<g fill=\"" << escape(layer.color) << "\" fill-opacity=\"" << num(layer.opacity) << "\">\n";
    for (const auto& p : layer.points) {
      if (!std::isfinite(p[0]) || !std::isfinite(p[1])) continue;
      const double px = (p[0] - frame.x0) * frame.scale;
      const double py = kTop + (frame.y0 - p[1]) * frame.scale;
      out << "<circle cx=\"" << num(px) << "\" cy=\"" << num(py) << "\" r=\"" << num(layer.radius) << "\"/>\n";
    }
    out << "</g>\n";
  }
  double ly = kTop + 16.0;
  for (const auto& layer : layers) {
    out << "<circle cx=\"12\" cy=\"" << num(ly - 4) << "\" r=\"4\" fill=\"" << escape(layer.color) << "\"/>";
    out << "<text x=\"20\" y=\"" << num(ly) << "\" font-size=\"11\">" << escape(layer.label) << " ("
        << layer.points.size() << ")</text>\n";
    ly += 15.0;
  }
  out << "</g>\n";
}

}  // namespace

std::string scatter_svg(const std::string& title, const std::vector<ScatterLayer>& layers, int width, int height) {
  const double size = std::min(width, height);
  const Frame frame = fit_frame({layers}, size);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size) << "\" height=\"" << num(size + 30)
      << "\" font-family=\"sans-serif\">\n";
  draw_panel(out, title, layers, frame, 0.0, size);
  out << "</svg>\n";
  return out.str();
}

std::string scatter_panels_svg(const std::vector<std::string>& titles,
                               const std::vector<std::vector<ScatterLayer>>& panels, int panel_size) {
  if (titles.size() != panels.size()) fail(ErrorKind::invalid_argument, "one title per panel is required");
  const double size = panel_size;
  const Frame frame = fit_frame(panels, size);
  constexpr double kGap = 16.0;
  const double total = panels.size() * size + (panels.empty() ? 0.0 : (panels.size() - 1) * kGap);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(total) << "\" height=\"" << num(size + 30)
      << "\" font-family=\"sans-serif\">\n";
  for (std::size_t i = 0; i < panels.size(); ++i) {
    draw_panel(out, titles[i], panels[i], frame, static_cast<double>(i) * (size + kGap), size);
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace fame
