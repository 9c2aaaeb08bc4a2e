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

#pragma once

#include <filesystem>
#include <vector>

#include "cpa/tensor.hpp"

namespace cpa {

/// Interleaved H x W x channels float image, values nominally in [0, 1].
/// Colour images have 3 channels; masks may have 1.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 1 x C x H x W tensor holding the same values.
Tensor to_tensor(const Image& img);
/// Batch element `n` of an N x C x H x W tensor as an image.
Image to_image(const Tensor& t, int n = 0);

/// Bilinear resize via the tensor op (align-corners false).
Image resize_bilinear(const Image& img, int height, int width);

/// PNG (8-bit gray/RGB) or binary PPM (P6) by file extension. Loaded
/// values are v / 255. Throws InputError on unreadable files.
Image read_image(const std::filesystem::path& path);
/// Writes 8-bit with round-to-nearest after clamping to [0, 1].
void write_image(const std::filesystem::path& path, const Image& img);

bool is_image_path(const std::filesystem::path& path);

}  // namespace cpa
