#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsdm/tensor.hpp"

namespace fsdm {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

// [C, H, W] in [-1, 1] <-> 8-bit, with p -> 2p/255 - 1 and its rounded inverse.
Tensor image_to_tensor(const Image8& image);
Image8 tensor_to_image(const Tensor& chw);
double pixel_to_unit(uint8_t p);
uint8_t unit_to_pixel(double v);

// Tiles [N, C, H, W] images into a grid, `columns` wide, with a pad-pixel gap.
Image8 tile_images(const Tensor& images, int columns, int pad = 2, uint8_t background = 255);
// Nearest-neighbour enlargement by an integer factor.
Image8 upscale(const Image8& image, int factor);
// Places b to the right of a, both padded to the taller height.
Image8 hconcat(const Image8& a, const Image8& b, int gap = 6, uint8_t background = 255);

}  // namespace fsdm
