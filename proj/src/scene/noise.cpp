// Copyright 2026 The VLA Adapt Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>

#include "lab/error.hpp"
#include "lab/scene.hpp"

namespace lab::scene {

std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::kMotionBlur:
      return "motion_blur";
    case NoiseFamily::kGaussianBlur:
      return "gaussian_blur";
    case NoiseFamily::kZoomBlur:
      return "zoom_blur";
    case NoiseFamily::kFog:
      return "fog";
    case NoiseFamily::kGlassBlur:
      return "glass_blur";
  }
  return "gaussian_blur";
}

NoiseFamily parse_noise(const std::string& s) {
  for (NoiseFamily f : kAllNoise)
    if (to_string(f) == s) return f;
  throw ParseError("unknown noise family '" + s + "'");
}

namespace {

std::size_t clamp_index(long i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
}

// 1-D convolution along x (axis 1) or y (axis 0), replicate border.
Image convolve_1d(const Image& in, const std::vector<double>& kernel, int axis) {
  const long radius = static_cast<long>(kernel.size() / 2);
  Image out(in.height, in.width);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          const std::size_t yy = axis == 0 ? clamp_index(static_cast<long>(y) + k, in.height) : y;
          const std::size_t xx = axis == 1 ? clamp_index(static_cast<long>(x) + k, in.width) : x;
          acc += kernel[static_cast<std::size_t>(k + radius)] * in.at(yy, xx, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

void clamp01(Image& img) {
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

double bilinear(const Image& img, double y, double x, std::size_t c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  return (img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx) * (1 - fy) +
         (img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx) * fy;
}

// Diamond-square plasma on a (2^k + 1)^2 grid, normalised to [0, 1].
std::vector<double> plasma(std::size_t min_size, Rng& rng, std::size_t& side) {
  side = 2;
  while (side + 1 < min_size) side *= 2;
  const std::size_t n = side + 1;
  std::vector<double> g(n * n, 0.0);
  auto at = [&](std::size_t y, std::size_t x) -> double& { return g[y * n + x]; };
  double wibble = 1.0;
  for (std::size_t step = side; step >= 2; step /= 2) {
    const std::size_t h = step / 2;
    for (std::size_t y = 0; y < side; y += step)
      for (std::size_t x = 0; x < side; x += step) {
        const double avg = (at(y, x) + at(y + step, x) + at(y, x + step) + at(y + step, x + step)) / 4;
        at(y + h, x + h) = avg + wibble * (rng.uniform() - 0.5);
      }
    for (std::size_t y = 0; y < n; y += h)
      for (std::size_t x = (y / h) % 2 ? 0 : h; x < n; x += step) {
        double s = 0.0;
        int k = 0;
        if (y >= h) s += at(y - h, x), ++k;
        if (y + h < n) s += at(y + h, x), ++k;
        if (x >= h) s += at(y, x - h), ++k;
        if (x + h < n) s += at(y, x + h), ++k;
        at(y, x) = s / k + wibble * (rng.uniform() - 0.5);
      }
    wibble /= 2.0;
  }
  const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
  const double span = *hi - *lo;
  for (double& v : g) v = span > 0 ? (v - *lo) / span : 0.0;
  side = n;
  return g;
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    s += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= s;
  return convolve_1d(convolve_1d(image, k, 1), k, 0);
}

Image apply_noise(const Image& image, NoiseFamily family, int severity, std::uint64_t seed) {
  if (severity < 0 || severity > 10) {
    throw ContractError("noise severity " + std::to_string(severity) + " outside 1..10");
  }
  if (severity == 0) return image;
  const double s = severity;
  Image out;
  switch (family) {
    case NoiseFamily::kMotionBlur: {
      const std::size_t len = 2 * static_cast<std::size_t>(severity) + 1;
      out = convolve_1d(image, std::vector<double>(len, 1.0 / static_cast<double>(len)), 1);
      break;
    }
    case NoiseFamily::kGaussianBlur:
      out = gaussian_blur(image, s);
      break;
    case NoiseFamily::kZoomBlur: {
      out = Image(image.height, image.width);
      const double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
      const int n = severity + 1;
      for (int k = 0; k < n; ++k) {
        const double z = 1.0 + 0.04 * k;
        for (std::size_t y = 0; y < image.height; ++y)
          for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              out.at(y, x, c) += bilinear(image, cy + (y - cy) / z, cx + (x - cx) / z, c) / n;
      }
      break;
    }
    case NoiseFamily::kFog: {
      Rng rng(seed);
      std::size_t side = 0;
      const auto field = plasma(std::max(image.height, image.width), rng, side);
      const double w = 0.05 * s;
      double mean = 0.0;
      for (double v : image.pixels) mean += v;
      mean /= static_cast<double>(image.pixels.size());
      const double contrast = 1.0 - 0.5 * w;
      out = Image(image.height, image.width);
      for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
          for (std::size_t c = 0; c < 3; ++c) {
            const double reduced = mean + (image.at(y, x, c) - mean) * contrast;
            out.at(y, x, c) = (1.0 - w) * reduced + w * field[y * side + x];
          }
      break;
    }
    case NoiseFamily::kGlassBlur: {
      // Pre-blur, `severity` shuffle passes, post-blur. A single pass on a sharp
      // image leaves shuffle noise that the next severity's wider blur removes.
      Rng rng(seed);
      const long r = (severity + 2) / 3;
      Image shuffled = gaussian_blur(image, s / 2.0);
      for (int pass = 0; pass < severity; ++pass) {
        const Image src = shuffled;
        for (std::size_t y = 0; y < image.height; ++y)
          for (std::size_t x = 0; x < image.width; ++x) {
            const long dy = static_cast<long>(rng.below(2 * r + 1)) - r;
            const long dx = static_cast<long>(rng.below(2 * r + 1)) - r;
            const std::size_t yy = clamp_index(static_cast<long>(y) + dy, image.height);
            const std::size_t xx = clamp_index(static_cast<long>(x) + dx, image.width);
            for (std::size_t c = 0; c < 3; ++c) shuffled.at(y, x, c) = src.at(yy, xx, c);
          }
      }
      out = gaussian_blur(shuffled, s / 2.0);
      break;
    }
  }
  clamp01(out);
  return out;
}

}  // namespace lab::scene
