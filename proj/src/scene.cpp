#include "s2fuse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s2fuse/errors.hpp"
#include "s2fuse/rng.hpp"

namespace s2fuse {

namespace {

// Stream offsets keep latents, mixing and texture independent of each other
// so changing one band count does not reshuffle the spatial content.
constexpr std::uint64_t kLatentStream = 0;
constexpr std::uint64_t kMixStream = 1000003;
constexpr std::uint64_t kTextureStream = 2000003;

// Non-negative weights keep every band positively correlated with the others.
constexpr double kMixMin = 0.0;
constexpr double kMixMax = 50.0;
constexpr double kBaseLevel = 20.0;

void normalize_unit(std::span<double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo;
  const double span = *hi - a;
  for (double& x : v) x = span > 0.0 ? (x - a) / span : 0.0;
}

void box_smooth(std::vector<double>& v, int h, int w) {
  std::vector<double> tmp(v.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xx = std::clamp(x + dx, 0, w - 1);
          acc += v[static_cast<std::size_t>(yy) * w + xx];
        }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / 9.0;
    }
  v.swap(tmp);
}

void gradient_field(std::span<double> out, int h, int w, SeededRng& rng) {
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uniform(0.5, 1.5);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (std::cos(angle) * x + std::sin(angle) * y) / std::max(h, w);
      const double v = (-std::sin(angle) * x + std::cos(angle) * y) / std::max(h, w);
      out[static_cast<std::size_t>(y) * w + x] = u + 0.3 * std::sin(2.0 * std::numbers::pi * freq * v + phase);
    }
  normalize_unit(out);
}

void blob_field(std::span<double> out, int h, int w, SeededRng& rng) {
  std::fill(out.begin(), out.end(), 0.0);
  const int count = 6 + static_cast<int>(rng.below(6));
  const double scale = std::min(h, w);
  for (int i = 0; i < count; ++i) {
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double r = rng.uniform(0.04, 0.12) * scale;
    const double amp = rng.uniform(0.3, 1.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        out[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-0.5 * d2 / (r * r));
      }
  }
  normalize_unit(out);
}

void rectangle_field(std::span<double> out, int h, int w, SeededRng& rng) {
  std::fill(out.begin(), out.end(), rng.uniform(0.0, 1.0));
  const int count = 8 + static_cast<int>(rng.below(8));
  for (int i = 0; i < count; ++i) {
    const int rh = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, h / 3))));
    const int rw = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, w / 3))));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
    const double level = rng.uniform(0.0, 1.0);
    for (int y = y0; y < std::min(h, y0 + rh); ++y)
      for (int x = x0; x < std::min(w, x0 + rw); ++x) out[static_cast<std::size_t>(y) * w + x] = level;
  }
}

void texture_field(std::span<double> out, int h, int w, SeededRng& rng) {
  std::vector<double> v(out.size());
  for (double& x : v) x = rng.normal();
  box_smooth(v, h, w);
  normalize_unit(v);
  std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace

SceneContent parse_scene_content(const std::string& text) {
  if (text == "gradients") return SceneContent::Gradients;
  if (text == "blobs") return SceneContent::Blobs;
  if (text == "rectangles") return SceneContent::Rectangles;
  if (text == "checkerboard") return SceneContent::Checkerboard;
  if (text == "mixture") return SceneContent::Mixture;
  throw ParameterError("unknown scene content '" + text + "'");
}

std::string to_string(SceneContent content) {
  switch (content) {
    case SceneContent::Gradients: return "gradients";
    case SceneContent::Blobs: return "blobs";
    case SceneContent::Rectangles: return "rectangles";
    case SceneContent::Checkerboard: return "checkerboard";
    case SceneContent::Mixture: return "mixture";
  }
  return "mixture";
}

void SceneSpec::validate() const {
  if (height < 1 || width < 1 || bands < 1) throw ParameterError("scene size and band count must be positive");
  if (!mixing.empty() && mixing.size() != static_cast<std::size_t>(bands) * kSceneLatents)
    throw DimensionError("scene mixing matrix must be bands x " + std::to_string(kSceneLatents));
  if (texture_sigma < 0.0) throw ParameterError("texture sigma must be non-negative");
}

Raster scene_latents(const SceneSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed + kLatentStream);
  Raster lat(kSceneLatents, spec.height, spec.width);
  gradient_field(lat.band(0), spec.height, spec.width, rng);
  blob_field(lat.band(1), spec.height, spec.width, rng);
  rectangle_field(lat.band(2), spec.height, spec.width, rng);
  texture_field(lat.band(3), spec.height, spec.width, rng);
  return lat;
}

std::vector<double> scene_mixing(const SceneSpec& spec) {
  spec.validate();
  if (!spec.mixing.empty()) return spec.mixing;
  SeededRng rng(spec.seed + kMixStream);
  std::vector<double> m(static_cast<std::size_t>(spec.bands) * kSceneLatents);
  for (double& v : m) v = rng.uniform(kMixMin, kMixMax);
  return m;
}

std::vector<double> scene_offsets(const SceneSpec& spec) {
  const auto m = scene_mixing(spec);
  std::vector<double> off(static_cast<std::size_t>(spec.bands), kBaseLevel);
  for (int b = 0; b < spec.bands; ++b)
    for (int k = 0; k < kSceneLatents; ++k)
      off[static_cast<std::size_t>(b)] += std::max(0.0, -m[static_cast<std::size_t>(b) * kSceneLatents + k]);
  return off;
}

Raster gen_scene(const SceneSpec& spec) {
  spec.validate();
  Raster out(spec.bands, spec.height, spec.width);
  for (int b = 0; b < spec.bands; ++b) out.meta(b).name = "b" + std::to_string(b + 1);

  if (spec.content == SceneContent::Checkerboard) {
    SeededRng rng(spec.seed + kLatentStream);
    const int cell = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, std::min(spec.height, spec.width) / 4))));
    for (int b = 0; b < spec.bands; ++b)
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) out.at(b, y, x) = ((y / cell + x / cell) % 2 == 0) ? 64.0 : 192.0;
    return out;
  }

  const Raster lat = scene_latents(spec);
  if (spec.content != SceneContent::Mixture) {
    const int k = spec.content == SceneContent::Gradients ? 0 : spec.content == SceneContent::Blobs ? 1 : 2;
    for (int b = 0; b < spec.bands; ++b) {
      auto src = lat.band(k);
      auto dst = out.band(b);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = 16.0 + 223.0 * src[i];
    }
    return out;
  }

  const auto m = scene_mixing(spec);
  const auto off = scene_offsets(spec);
  SeededRng tex(spec.seed + kTextureStream);
  for (int b = 0; b < spec.bands; ++b) {
    auto dst = out.band(b);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v = off[static_cast<std::size_t>(b)];
      for (int k = 0; k < kSceneLatents; ++k) v += m[static_cast<std::size_t>(b) * kSceneLatents + k] * lat.band(k)[i];
      dst[i] = v;
    }
    for (double& v : dst) v = std::clamp(v + spec.texture_sigma * tex.normal(), 0.0, 255.0);
  }
  return out;
}

}  // namespace s2fuse
