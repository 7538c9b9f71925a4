#include "fsdm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace fsdm {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open image " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed for " + path);
  }
  Image8 image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG file: " + path);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.channels = png_get_channels(png, info);
  if (image.channels != 1 && image.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported channel layout in " + path);
  }
  image.pixels.resize(static_cast<size_t>(image.width) * image.height * image.channels);
  rows.resize(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<size_t>(y)] = image.pixels.data() + static_cast<size_t>(y) * image.width * image.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::string& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::runtime_error("write_png: channels must be 1 or 3");
  if (image.pixels.size() != static_cast<size_t>(image.width) * image.height * image.channels) {
    throw std::runtime_error("write_png: pixel buffer does not match dimensions");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write image " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<size_t>(y) * image.width *
                                                                        image.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

double pixel_to_unit(uint8_t p) { return 2.0 * static_cast<double>(p) / 255.0 - 1.0; }

uint8_t unit_to_pixel(double v) {
  const double p = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<uint8_t>(p);
}

Tensor image_to_tensor(const Image8& image) {
  const int64_t c = image.channels, h = image.height, w = image.width;
  std::vector<double> values(static_cast<size_t>(c * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t k = 0; k < c; ++k) {
        values[static_cast<size_t>((k * h + y) * w + x)] = pixel_to_unit(image.pixels[static_cast<size_t>((y * w + x) * c + k)]);
      }
    }
  }
  return Tensor({c, h, w}, std::move(values));
}

Image8 tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3) throw std::runtime_error("tensor_to_image expects [C, H, W]");
  Image8 image;
  image.channels = static_cast<int>(chw.dim(0));
  image.height = static_cast<int>(chw.dim(1));
  image.width = static_cast<int>(chw.dim(2));
  const int64_t c = image.channels, h = image.height, w = image.width;
  image.pixels.resize(static_cast<size_t>(c * h * w));
  auto v = chw.data();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t k = 0; k < c; ++k) {
        image.pixels[static_cast<size_t>((y * w + x) * c + k)] = unit_to_pixel(v[static_cast<size_t>((k * h + y) * w + x)]);
      }
    }
  }
  return image;
}

Image8 tile_images(const Tensor& images, int columns, int pad, uint8_t background) {
  if (images.rank() != 4) throw std::runtime_error("tile_images expects [N, C, H, W]");
  const int n = static_cast<int>(images.dim(0));
  const int c = static_cast<int>(images.dim(1)), h = static_cast<int>(images.dim(2)), w = static_cast<int>(images.dim(3));
  columns = std::max(1, std::min(columns, std::max(n, 1)));
  const int rows = n == 0 ? 0 : (n + columns - 1) / columns;
  Image8 out;
  out.channels = c;
  out.width = columns * w + (columns + 1) * pad;
  out.height = rows * h + (rows + 1) * pad;
  out.pixels.assign(static_cast<size_t>(out.width) * out.height * c, background);
  auto v = images.data();
  const size_t per = static_cast<size_t>(c) * h * w;
  for (int i = 0; i < n; ++i) {
    const int ox = pad + (i % columns) * (w + pad), oy = pad + (i / columns) * (h + pad);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) {
          out.pixels[(static_cast<size_t>(oy + y) * out.width + (ox + x)) * c + k] =
              unit_to_pixel(v[i * per + (static_cast<size_t>(k) * h + y) * w + x]);
        }
      }
    }
  }
  return out;
}

Image8 upscale(const Image8& image, int factor) {
  if (factor < 1) throw std::runtime_error("upscale: factor must be positive");
  Image8 out;
  out.channels = image.channels;
  out.width = image.width * factor;
  out.height = image.height * factor;
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * out.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const size_t src = (static_cast<size_t>(y / factor) * image.width + x / factor) * image.channels;
      const size_t dst = (static_cast<size_t>(y) * out.width + x) * out.channels;
      std::copy_n(image.pixels.begin() + static_cast<ptrdiff_t>(src), image.channels,
                  out.pixels.begin() + static_cast<ptrdiff_t>(dst));
    }
  }
  return out;
}

Image8 hconcat(const Image8& a, const Image8& b, int gap, uint8_t background) {
  if (a.channels != b.channels) throw std::runtime_error("hconcat: channel mismatch");
  Image8 out;
  out.channels = a.channels;
  out.width = a.width + gap + b.width;
  out.height = std::max(a.height, b.height);
  out.pixels.assign(static_cast<size_t>(out.width) * out.height * out.channels, background);
  auto blit = [&](const Image8& src, int ox) {
    for (int y = 0; y < src.height; ++y) {
      std::copy_n(src.pixels.begin() + static_cast<ptrdiff_t>(y) * src.width * src.channels,
                  src.width * src.channels,
                  out.pixels.begin() + (static_cast<ptrdiff_t>(y) * out.width + ox) * out.channels);
    }
  };
  blit(a, 0);
  blit(b, a.width + gap);
  return out;
}

}  // namespace fsdm
