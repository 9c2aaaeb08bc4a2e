// Copyright 2026 The CPA-Enhancer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpa/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"

namespace cpa {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    throw InputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width), gray ? 1 : 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = buffer[i] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), buffer.begin(), quantize);
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw InputError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

// Skips whitespace and '#' comments between PPM header tokens.
int ppm_token(std::istream& is) {
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  is >> v;
  return v;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (magic != "P6") throw InputError("not a binary PPM (P6): " + path.string());
  const int w = ppm_token(is);
  const int h = ppm_token(is);
  const int maxval = ppm_token(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw InputError("unsupported PPM header in " + path.string());
  is.get();  // single whitespace before the raster
  std::vector<unsigned char> buffer(static_cast<std::size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()))) {
    throw InputError("truncated PPM raster in " + path.string());
  }
  Image img(h, w, 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = static_cast<float>(buffer[i]) / maxval;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw InputError("PPM output needs a 3-channel image");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> buffer(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), buffer.begin(), quantize);
  os.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (!os) throw InputError("failed writing " + path.string());
}

}  // namespace

Tensor to_tensor(const Image& img) {
  if (img.empty()) throw InputError("empty image");
  std::vector<double> v(img.pixels.size());
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < img.channels; ++c) v[c * plane + p] = img.pixels[p * img.channels + c];
  }
  return Tensor::from({1, img.channels, img.height, img.width}, std::move(v));
}

Image to_image(const Tensor& t, int n) {
  const Shape s = t.shape();
  if (n < 0 || n >= s.n) throw DimensionError("batch index out of range for " + s.str());
  Image img(s.h, s.w, s.c);
  const std::size_t plane = s.plane();
  const double* base = t.data().data() + static_cast<std::size_t>(n) * s.c * plane;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < s.c; ++c) img.pixels[p * s.c + c] = static_cast<float>(base[c * plane + p]);
  }
  return img;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  NoGradGuard no_grad;
  return to_image(bilinear_rescale(to_tensor(img), height, width));
}

bool is_image_path(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  return ext == ".png" || ext == ".ppm";
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw InputError("no such image: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw InputError("unsupported image format: " + path.string());
}

void write_image(const std::filesystem::path& path, const Image& img) {
  if (img.empty()) throw InputError("refusing to write an empty image");
  const std::string ext = lower_ext(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw InputError("unsupported image format: " + path.string());
}

}  // namespace cpa
