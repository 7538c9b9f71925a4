#include "fsdm/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace fsdm {

namespace {

// 3x5 glyphs, rows top to bottom.
const std::map<char, const char*>& font() {
  static const std::map<char, const char*> glyphs{
      {'0', "111101101101111"}, {'1', "010110010010111"}, {'2', "111001111100111"}, {'3', "111001111001111"},
      {'4', "101101111001001"}, {'5', "111100111001111"}, {'6', "111100111101111"}, {'7', "111001001010010"},
      {'8', "111101111101111"}, {'9', "111101111001111"}, {'A', "010101111101101"}, {'B', "110101110101110"},
      {'C', "011100100100011"}, {'D', "110101101101110"}, {'E', "111100110100111"}, {'F', "111100110100100"},
      {'G', "011100101101011"}, {'H', "101101111101101"}, {'I', "111010010010111"}, {'J', "001001001101010"},
      {'K', "101101110101101"}, {'L', "100100100100111"}, {'M', "101111111101101"}, {'N', "110101101101101"},
      {'O', "010101101101010"}, {'P', "110101110100100"}, {'Q', "010101101110011"}, {'R', "110101110101101"},
      {'S', "011100010001110"}, {'T', "111010010010010"}, {'U', "101101101101111"}, {'V', "101101101101010"},
      {'W', "101101111111101"}, {'X', "101101010101101"}, {'Y', "101101010010010"}, {'Z', "111001010100111"},
      {'.', "000000000000010"}, {'-', "000000111000000"}, {'_', "000000000000111"}, {'+', "000010111010000"},
      {':', "000010000010000"}, {'/', "001001010100100"}, {'(', "010100100100010"}, {')', "010001001001010"},
      {'=', "000111000111000"}, {' ', "000000000000000"}};
  return glyphs;
}

const std::vector<Rgb> kPalette{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}};
const Rgb kInk{40, 40, 40};
const Rgb kGrid{225, 225, 225};

std::string tick_label(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Labels for evenly spaced ticks with just enough digits to tell them apart.
std::vector<std::string> tick_labels(double lo, double hi, int count) {
  std::vector<std::string> out;
  for (int digits = 3; digits <= 12; ++digits) {
    out.clear();
    for (int i = 0; i < count; ++i) out.push_back(tick_label(lo + (hi - lo) * i / (count - 1), digits));
    bool distinct = true;
    for (size_t i = 1; i < out.size(); ++i) distinct = distinct && out[i] != out[i - 1];
    if (distinct) break;
  }
  return out;
}

struct Frame {
  int left = 78, right, top = 36, bottom;
  double x_lo, x_hi, y_lo, y_hi;
  double px(double x) const { return left + (x - x_lo) / (x_hi - x_lo) * (right - left); }
  double py(double y) const { return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top); }
};

void pad_range(double& lo, double& hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
}

Frame draw_frame(Canvas& c, double x_lo, double x_hi, double y_lo, double y_hi, const std::string& title,
                 const std::string& x_label, bool y_from_zero = false) {
  pad_range(x_lo, x_hi);
  pad_range(y_lo, y_hi);
  const double margin = 0.05 * (y_hi - y_lo);
  Frame f{78, c.width() - 20, 36, c.height() - 46, x_lo, x_hi, y_from_zero ? 0.0 : y_lo - margin, y_hi + margin};
  const auto y_ticks = tick_labels(f.y_lo, f.y_hi, 5), x_ticks = tick_labels(f.x_lo, f.x_hi, 5);
  for (int i = 0; i <= 4; ++i) {
    const double y = f.py(f.y_lo + (f.y_hi - f.y_lo) * i / 4.0);
    c.line(f.left, y, f.right, y, kGrid);
    const std::string& ys = y_ticks[static_cast<size_t>(i)];
    c.text(f.left - 8 - Canvas::text_width(ys), static_cast<int>(y) - 5, ys, kInk);
    const double x = f.px(f.x_lo + (f.x_hi - f.x_lo) * i / 4.0);
    c.line(x, f.bottom, x, f.bottom + 5, kInk);
    const std::string& xs = x_ticks[static_cast<size_t>(i)];
    c.text(static_cast<int>(x) - Canvas::text_width(xs) / 2, f.bottom + 10, xs, kInk);
  }
  c.line(f.left, f.top, f.left, f.bottom, kInk);
  c.line(f.left, f.bottom, f.right, f.bottom, kInk);
  c.text((c.width() - Canvas::text_width(title)) / 2, 12, title, kInk);
  c.text((f.left + f.right - Canvas::text_width(x_label)) / 2, c.height() - 18, x_label, kInk);
  return f;
}

void draw_legend(Canvas& c, const Frame& f, const std::vector<std::string>& labels) {
  int widest = 0;
  for (const auto& l : labels) widest = std::max(widest, Canvas::text_width(l));
  const int x = f.right - widest - 40, y0 = f.top + 8;
  c.rect(x - 6, y0 - 6, f.right - 4, y0 + 16 * static_cast<int>(labels.size()), {255, 255, 255}, 0.85);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = y0 + 16 * static_cast<int>(i);
    c.rect(x, y, x + 18, y + 9, kPalette[i % kPalette.size()]);
    c.text(x + 26, y, labels[i], kInk);
  }
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background) {
  if (width < 1 || height < 1) throw std::invalid_argument("canvas size must be positive");
  image_.width = width;
  image_.height = height;
  image_.channels = 3;
  image_.pixels.resize(static_cast<size_t>(width) * static_cast<size_t>(height) * 3);
  for (size_t i = 0; i < image_.pixels.size(); i += 3) std::copy(background.begin(), background.end(), &image_.pixels[i]);
}

void Canvas::put(int x, int y, Rgb color, double alpha) {
  if (x < 0 || y < 0 || x >= image_.width || y >= image_.height) return;
  uint8_t* p = &image_.pixels[(static_cast<size_t>(y) * static_cast<size_t>(image_.width) + static_cast<size_t>(x)) * 3];
  for (int k = 0; k < 3; ++k) p[k] = static_cast<uint8_t>(std::lround(alpha * color[k] + (1.0 - alpha) * p[k]));
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb color, int thickness) {
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int n = std::max(1, static_cast<int>(std::ceil(len)));
  const int lo = -(thickness - 1) / 2, hi = thickness / 2;
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) / n;
    const int x = static_cast<int>(std::lround(x0 + s * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + s * (y1 - y0)));
    for (int dx = lo; dx <= hi; ++dx) {
      for (int dy = lo; dy <= hi; ++dy) put(x + dx, y + dy, color);
    }
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb color, double alpha) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) put(x, y, color, alpha);
  }
}

int Canvas::text(int x, int y, const std::string& s, Rgb color, int scale) {
  int cx = x;
  for (char ch : s) {
    const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    const char* bits = it == font().end() ? "111101101101111" : it->second;
    for (int r = 0; r < 5; ++r) {
      for (int col = 0; col < 3; ++col) {
        if (bits[r * 3 + col] == '1') rect(cx + col * scale, y + r * scale, cx + (col + 1) * scale - 1, y + (r + 1) * scale - 1, color);
      }
    }
    cx += 4 * scale;
  }
  return cx - x;
}

int Canvas::text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 4 * scale; }

Image8 line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                 int width, int height) {
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("line_plot: x and y lengths differ for " + s.label);
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  Canvas c(width, height);
  const Frame f = draw_frame(c, x_lo, x_hi, y_lo, y_hi, title, x_label);
  std::vector<std::string> labels;
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb color = kPalette[k % kPalette.size()];
    bool has_prev = false;
    double px = 0, py = 0;
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        has_prev = false;
        continue;
      }
      const double x = f.px(s.x[i]), y = f.py(s.y[i]);
      if (has_prev) c.line(px, py, x, y, color, 2);
      if (s.x.size() <= 40) c.rect(static_cast<int>(x) - 2, static_cast<int>(y) - 2, static_cast<int>(x) + 2, static_cast<int>(y) + 2, color);
      px = x;
      py = y;
      has_prev = true;
    }
    labels.push_back(s.label);
  }
  draw_legend(c, f, labels);
  return c.image();
}

Image8 histogram_plot(const std::vector<double>& edges, const std::vector<std::vector<int>>& counts,
                      const std::vector<std::string>& labels, const std::string& title, const std::string& x_label,
                      int width, int height) {
  if (edges.size() < 2) throw std::invalid_argument("histogram_plot: need at least one bin");
  int top = 0;
  for (const auto& c : counts) {
    if (c.size() + 1 != edges.size()) throw std::invalid_argument("histogram_plot: counts do not match edges");
    for (int v : c) top = std::max(top, v);
  }
  Canvas c(width, height);
  const Frame f = draw_frame(c, edges.front(), edges.back(), 0.0, std::max(1, top), title, x_label, true);
  for (size_t k = 0; k < counts.size(); ++k) {
    const Rgb color = kPalette[k % kPalette.size()];
    for (size_t b = 0; b + 1 < edges.size(); ++b) {
      if (counts[k][b] == 0) continue;
      c.rect(static_cast<int>(f.px(edges[b])) + 1, static_cast<int>(f.py(counts[k][b])),
             static_cast<int>(f.px(edges[b + 1])) - 1, static_cast<int>(f.py(0.0)), color, 0.5);
    }
  }
  draw_legend(c, f, labels);
  return c.image();
}

}  // namespace fsdm
