#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gunet/errors.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

// 8-bit raster with interleaved channels (1 = grayscale, 3 = RGB).
struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
};

// Reads an 8-bit PNG, keeping grayscale files single-channel and everything
// else as RGB; alpha is composited away against black.
inline ImageU8 read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ImageU8 out;
  out.h = static_cast<int>(image.height);
  out.w = static_cast<int>(image.width);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  return out;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write PNG " + path + ": unsupported channel count " +
                  std::to_string(img.channels));
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.w);
  image.height = static_cast<png_uint_32>(img.h);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + image.message);
}

// Converts a [0,1]-valued single-image tensor (1 x c x h x w, c in {1,3}) to
// an 8-bit raster, clamping out-of-range values.
template <typename T>
ImageU8 to_u8(const Tensor4<T>& t) {
  const Shape4 s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw ShapeError("to_u8: want 1x{1|3}xHxW, got " + s.str());
  ImageU8 img;
  img.h = s.h;
  img.w = s.w;
  img.channels = s.c;
  img.pixels.resize(static_cast<std::size_t>(s.h) * s.w * s.c);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        double v = static_cast<double>(t.at(0, c, y, x)) * 255.0;
        v = v < 0 ? 0 : (v > 255 ? 255 : v);
        img.pixels[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            static_cast<std::uint8_t>(v + 0.5);
      }
  return img;
}

// Converts an 8-bit raster to a [0,1] tensor with the requested channel
// count: grayscale is replicated up to RGB, RGB is averaged down to gray.
template <typename T>
Tensor4<T> to_tensor(const ImageU8& img, int channels) {
  if (channels != 1 && channels != 3)
    throw ShapeError("to_tensor: channel count must be 1 or 3, got " + std::to_string(channels));
  Tensor4<T> t(Shape4{1, channels, img.h, img.w});
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      if (channels == static_cast<int>(img.channels)) {
        for (int c = 0; c < channels; ++c)
          t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c) / 255.0);
      } else if (channels == 3) {
        const T v = static_cast<T>(img.at(y, x, 0) / 255.0);
        t.at(0, 0, y, x) = t.at(0, 1, y, x) = t.at(0, 2, y, x) = v;
      } else {
        const double v = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
        t.at(0, 0, y, x) = static_cast<T>(v / 255.0);
      }
    }
  return t;
}

}  // namespace gunet
