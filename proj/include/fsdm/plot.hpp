#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fsdm/image_io.hpp"

namespace fsdm {

using Rgb = std::array<uint8_t, 3>;

// RGB raster with a few drawing primitives. Text uses a built-in 3x5 font
// (digits, letters rendered upper case, and . - _ + : / ( ) =).
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});
  int width() const { return image_.width; }
  int height() const { return image_.height; }
  // alpha in [0, 1] blends over the current pixel; out-of-range points are clipped.
  void put(int x, int y, Rgb color, double alpha = 1.0);
  void line(double x0, double y0, double x1, double y1, Rgb color, int thickness = 1);
  void rect(int x0, int y0, int x1, int y1, Rgb color, double alpha = 1.0);
  // Top-left anchored; returns the drawn width in pixels.
  int text(int x, int y, const std::string& s, Rgb color, int scale = 2);
  static int text_width(const std::string& s, int scale = 2);
  const Image8& image() const { return image_; }

 private:
  Image8 image_;
};

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Line chart with labelled axes and a legend; non-finite points are skipped.
Image8 line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                 int width = 720, int height = 440);

// Overlaid histograms on shared bin edges (edges.size() == counts[i].size() + 1).
Image8 histogram_plot(const std::vector<double>& edges, const std::vector<std::vector<int>>& counts,
                      const std::vector<std::string>& labels, const std::string& title, const std::string& x_label,
                      int width = 720, int height = 440);

}  // namespace fsdm
