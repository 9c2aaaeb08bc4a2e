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

#include "cpa/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"

#include "cpa/errors.hpp"

namespace cpa::degrade {

namespace {

using json = nlohmann::json;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void require_color(const Image& img, const char* op) {
  if (img.empty() || img.channels != 3) {
    throw InputError(std::string(op) + " expects a non-empty 3-channel image");
  }
}

// Quantile by nth_element on a copy; q in [0, 1].
double quantile(std::vector<double> values, double q) {
  const auto k = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

// Zero outside the image.
double sample_bilinear(const std::vector<double>& v, int h, int w, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  auto px = [&](int yy, int xx) {
    return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : v[static_cast<std::size_t>(yy) * w + xx];
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

// Classic gradient noise over a seeded 256-entry permutation.
class Perlin {
 public:
  explicit Perlin(std::uint64_t seed) {
    std::array<int, 256> p{};
    for (int i = 0; i < 256; ++i) p[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = 255; i > 0; --i) {
      std::uniform_int_distribution<int> pick(0, i);
      std::swap(p[i], p[pick(rng)]);
    }
    for (int i = 0; i < 512; ++i) perm_[i] = p[i & 255];
  }

  double operator()(double x, double y) const {
    const int xi = static_cast<int>(std::floor(x)) & 255;
    const int yi = static_cast<int>(std::floor(y)) & 255;
    const double xf = x - std::floor(x);
    const double yf = y - std::floor(y);
    const double u = fade(xf);
    const double v = fade(yf);
    const int aa = perm_[perm_[xi] + yi];
    const int ab = perm_[perm_[xi] + yi + 1];
    const int ba = perm_[perm_[xi + 1] + yi];
    const int bb = perm_[perm_[xi + 1] + yi + 1];
    const double x1 = lerp(grad(aa, xf, yf), grad(ba, xf - 1, yf), u);
    const double x2 = lerp(grad(ab, xf, yf - 1), grad(bb, xf - 1, yf - 1), u);
    return lerp(x1, x2, v);
  }

 private:
  static double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
  static double lerp(double a, double b, double t) { return a + t * (b - a); }
  static double grad(int hash, double x, double y) {
    switch (hash & 7) {
      case 0: return x + y;
      case 1: return -x + y;
      case 2: return x - y;
      case 3: return -x - y;
      case 4: return x;
      case 5: return -x;
      case 6: return y;
      default: return -y;
    }
  }
  std::array<int, 512> perm_{};
};

struct SnowDensity {
  double quantile;   // fraction of pixels left dark
  double cell;       // flake scale in pixels
};

SnowDensity snow_density(const std::string& name) {
  if (name == "light") return {0.975, 2.5};
  if (name == "medium") return {0.95, 3.0};
  if (name == "heavy") return {0.91, 3.5};
  throw ParameterError("unknown snow density '" + name + "' (light, medium, heavy)");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

json params_json(const DegradationSpec& spec) {
  json j = json::object();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FogParams>) {
          j["A"] = p.A;
          j["i"] = p.i;
        } else if constexpr (std::is_same_v<T, DarkParams>) {
          j["gamma"] = p.gamma;
        } else if constexpr (std::is_same_v<T, SnowParams>) {
          j["density"] = p.density;
          if (!p.mask_path.empty()) j["mask"] = p.mask_path;
        } else if constexpr (std::is_same_v<T, RainParams>) {
          j["beta"] = p.beta;
          j["overlay"] = p.overlay;
          j["quantile"] = p.field.quantile;
          j["angle"] = p.field.angle_deg;
          j["length"] = p.field.length;
        } else if constexpr (std::is_same_v<T, NoiseParams>) {
          j["sigma"] = p.sigma;
        }
      },
      spec.params);
  return j;
}

Params params_from_json(Kind kind, const json& j) {
  switch (kind) {
    case Kind::none: return std::monostate{};
    case Kind::fog: return FogParams{j.at("A").get<double>(), j.at("i").get<int>()};
    case Kind::dark: return DarkParams{j.at("gamma").get<double>()};
    case Kind::snow: return SnowParams{j.value("density", std::string("medium")), j.value("mask", std::string())};
    case Kind::rain: {
      RainParams p;
      p.beta = j.at("beta").get<double>();
      p.overlay = j.value("overlay", false);
      p.field.quantile = j.value("quantile", p.field.quantile);
      p.field.angle_deg = j.value("angle", p.field.angle_deg);
      p.field.length = j.value("length", p.field.length);
      return p;
    }
    case Kind::noise: return NoiseParams{j.at("sigma").get<double>()};
  }
  throw ParameterError("unhandled degradation kind");
}

bool has_params(const DegradationSpec& spec) { return !std::holds_alternative<std::monostate>(spec.params); }

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::fog: return "fog";
    case Kind::dark: return "dark";
    case Kind::snow: return "snow";
    case Kind::rain: return "rain";
    case Kind::noise: return "noise";
  }
  return "unknown";
}

Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::none, Kind::fog, Kind::dark, Kind::snow, Kind::rain, Kind::noise}) {
    if (to_string(k) == name) return k;
  }
  throw ParameterError("unknown degradation kind '" + name + "'");
}

Image apply_fog(const Image& img, double A, int i) {
  if (i < 0 || i > 9) throw ParameterError("fog level i must be in 0..9, got " + std::to_string(i));
  return apply_fog_beta(img, A, 0.05 + 0.01 * i);
}

Image apply_fog_beta(const Image& img, double A, double beta) {
  require_color(img, "fog");
  if (!(A >= 0.0 && A <= 1.0)) throw ParameterError("fog atmospheric light A must be in [0, 1]");
  const int cy = img.height / 2;
  const int cx = img.width / 2;
  const double size = std::sqrt(static_cast<double>(std::max(img.height, img.width)));
  Image out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double rho = std::hypot(static_cast<double>(y - cy), static_cast<double>(x - cx));
      const double t = std::exp(-beta * (-0.04 * rho + size));
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = clamp01(img.at(y, x, c) * t + A * (1.0 - t));
    }
  }
  return out;
}

Image apply_dark(const Image& img, double gamma) {
  require_color(img, "dark");
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  Image out = img;
  for (float& v : out.pixels) v = clamp01(std::pow(static_cast<double>(v), gamma));
  return out;
}

Image apply_snow(const Image& img, const Image& mask) {
  require_color(img, "snow");
  if (mask.empty() || (mask.channels != 1 && mask.channels != 3)) {
    throw InputError("snow mask must have 1 or 3 channels");
  }
  const Image m = resize_bilinear(mask, img.height, img.width);
  Image out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double add = m.at(y, x, m.channels == 1 ? 0 : c);
        out.at(y, x, c) = clamp01(static_cast<double>(img.at(y, x, c)) + add);
      }
    }
  }
  return out;
}

std::vector<double> gaussian_field(int height, int width, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(height) * width * channels);
  for (double& x : v) x = normal(rng);
  return v;
}

Image rain_field(int height, int width, std::uint64_t seed, const RainFieldOptions& options) {
  if (height <= 0 || width <= 0) throw ParameterError("rain field needs a positive size");
  if (options.length < 1) throw ParameterError("rain streak length must be >= 1");
  const std::vector<double> noise = gaussian_field(height, width, 1, seed);
  const double thr = quantile(noise, options.quantile);
  std::vector<double> seeds(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) seeds[i] = noise[i] >= thr ? 1.0 : 0.0;

  // Motion blur along the rotated streak axis.
  const double theta = options.angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(theta);
  const double dy = std::sin(theta);
  const double half = (options.length - 1) / 2.0;
  Image field(height, width, 1);
  double peak = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = 0; k < options.length; ++k) {
        const double t = k - half;
        acc += sample_bilinear(seeds, height, width, y + t * dy, x + t * dx);
      }
      acc /= options.length;
      field.at(y, x, 0) = static_cast<float>(acc);
      peak = std::max(peak, acc);
    }
  }
  if (peak > 0.0) {
    for (float& v : field.pixels) v = static_cast<float>(v / peak);
  }
  return field;
}

Image blend_rain(const Image& img, const Image& field, double beta, bool overlay) {
  require_color(img, "rain");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("rain beta must be in [0, 1]");
  const Image r = resize_bilinear(field, img.height, img.width);
  Image out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double R = r.at(y, x, r.channels == 1 ? 0 : c);
        const double I = img.at(y, x, c);
        out.at(y, x, c) = clamp01(I * (1.0 - R) + beta * (overlay ? R : I));
      }
    }
  }
  return out;
}

Image apply_rain(const Image& img, double beta, std::uint64_t seed, bool overlay, const RainFieldOptions& options) {
  require_color(img, "rain");
  return blend_rain(img, rain_field(img.height, img.width, seed, options), beta, overlay);
}

Image apply_noise(const Image& img, double sigma, std::uint64_t seed) {
  require_color(img, "noise");
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
  const std::vector<double> n = gaussian_field(img.height, img.width, 3, seed);
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = clamp01(static_cast<double>(img.pixels[i]) + n[i] * (sigma / 255.0));
  }
  return out;
}

Image snow_mask(int height, int width, const std::string& density, std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw ParameterError("snow mask needs a positive size");
  const SnowDensity d = snow_density(density);
  const Perlin fine(seed);
  const Perlin coarse(splitmix64(seed));
  std::vector<double> v(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      v[static_cast<std::size_t>(y) * width + x] =
          fine(x / d.cell, y / d.cell) + 0.5 * coarse(x / (2.0 * d.cell), y / (2.0 * d.cell));
    }
  }
  const double thr = quantile(v, d.quantile);
  const double top = *std::max_element(v.begin(), v.end());
  const double span = std::max(top - thr, 1e-12);
  Image mask(height, width, 1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = std::clamp((v[i] - thr) / span, 0.0, 1.0);
    mask.pixels[i] = static_cast<float>(std::sqrt(t));  // soft flake edges
  }
  return mask;
}

Image apply(const Image& img, const DegradationSpec& spec) {
  if (spec.kind != Kind::none && !has_params(spec)) {
    throw ParameterError("degradation spec for " + to_string(spec.kind) + " has no parameters");
  }
  switch (spec.kind) {
    case Kind::none: return img;
    case Kind::fog: {
      const auto& p = std::get<FogParams>(spec.params);
      return apply_fog(img, p.A, p.i);
    }
    case Kind::dark: return apply_dark(img, std::get<DarkParams>(spec.params).gamma);
    case Kind::snow: {
      const auto& p = std::get<SnowParams>(spec.params);
      const Image mask = p.mask_path.empty() ? snow_mask(img.height, img.width, p.density, spec.seed)
                                             : read_image(p.mask_path);
      return apply_snow(img, mask);
    }
    case Kind::rain: {
      const auto& p = std::get<RainParams>(spec.params);
      return apply_rain(img, p.beta, spec.seed, p.overlay, p.field);
    }
    case Kind::noise: return apply_noise(img, std::get<NoiseParams>(spec.params).sigma, spec.seed);
  }
  throw ParameterError("unhandled degradation kind");
}

DegradationSpec sample_spec(Kind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DegradationSpec spec{kind, std::monostate{}, seed};
  switch (kind) {
    case Kind::none: break;
    case Kind::fog: spec.params = FogParams{0.5, std::uniform_int_distribution<int>(0, 9)(rng)}; break;
    case Kind::dark: spec.params = DarkParams{std::uniform_real_distribution<double>(1.5, 5.0)(rng)}; break;
    case Kind::snow: spec.params = SnowParams{}; break;
    case Kind::rain: spec.params = RainParams{}; break;
    case Kind::noise: {
      constexpr std::array<double, 3> levels{15.0, 25.0, 50.0};
      spec.params = NoiseParams{levels[std::uniform_int_distribution<int>(0, 2)(rng)]};
      break;
    }
  }
  return spec;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index)); }

DatasetManifest build_manifest(const std::filesystem::path& src_dir, const std::vector<DegradationSpec>& specs,
                               double mix, std::uint64_t seed, const std::filesystem::path& dst_dir) {
  namespace fs = std::filesystem;
  if (!(mix >= 0.0 && mix <= 1.0)) throw ParameterError("mix fraction must be in [0, 1]");
  if (!fs::is_directory(src_dir)) throw InputError("source directory not found: " + src_dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(src_dir)) {
    if (e.is_regular_file() && is_image_path(e.path())) images.push_back(e.path());
  }
  if (images.empty()) throw InputError("no PNG/PPM images in " + src_dir.string());
  std::sort(images.begin(), images.end());

  const std::size_t n = images.size();
  const auto degraded = static_cast<std::size_t>(std::llround(mix * static_cast<double>(n)));
  if (degraded > 0 && specs.empty()) throw ParameterError("mix > 0 needs at least one degradation spec");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(degraded));
  std::sort(chosen.begin(), chosen.end());

  DatasetManifest manifest;
  std::set<std::string> dsts;
  std::size_t rank = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t image_seed = mix_seed(seed, i);
    DegradationSpec spec{Kind::none, std::monostate{}, image_seed};
    if (rank < chosen.size() && chosen[rank] == i) {
      const DegradationSpec& tmpl = specs[rank % specs.size()];
      spec = has_params(tmpl) || tmpl.kind == Kind::none ? tmpl : sample_spec(tmpl.kind, image_seed);
      spec.seed = image_seed;
      ++rank;
    }
    ManifestEntry entry;
    entry.src = images[i].string();
    entry.dst = (dst_dir / (images[i].stem().string() + "_" + to_string(spec.kind) + ".png")).string();
    entry.spec = spec;
    for (const char* ext : {".xml", ".txt", ".json"}) {
      fs::path ann = images[i];
      ann.replace_extension(ext);
      if (fs::is_regular_file(ann)) {
        entry.annotation = ann.string();
        break;
      }
    }
    if (!dsts.insert(entry.dst).second) throw InputError("duplicate destination path " + entry.dst);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

std::string params_to_json(const DegradationSpec& spec) { return params_json(spec).dump(); }

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) {
    json j;
    j["src"] = e.src;
    j["dst"] = e.dst;
    j["kind"] = to_string(e.spec.kind);
    j["params"] = params_json(e.spec);
    j["seed"] = e.spec.seed;
    if (e.annotation) j["annotation"] = *e.annotation;
    os << j.dump() << "\n";
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.src = j.at("src").get<std::string>();
      e.dst = j.at("dst").get<std::string>();
      e.spec.kind = parse_kind(j.at("kind").get<std::string>());
      e.spec.params = params_from_json(e.spec.kind, j.value("params", json::object()));
      e.spec.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("annotation")) e.annotation = j["annotation"].get<std::string>();
      manifest.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return manifest;
}

void materialize(const DatasetManifest& manifest) {
  for (const auto& e : manifest.entries) {
    const std::filesystem::path dst(e.dst);
    if (dst.has_parent_path()) std::filesystem::create_directories(dst.parent_path());
    write_image(dst, apply(read_image(e.src), e.spec));
  }
}

}  // namespace cpa::degrade
