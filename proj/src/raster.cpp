#include "s2fuse/raster.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "s2fuse/errors.hpp"

namespace s2fuse {

namespace {
bool g_verbose = false;
}

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

void info(const std::string& message) {
  if (g_verbose) std::cerr << message << '\n';
}

void set_verbose(bool v) { g_verbose = v; }
bool verbose() { return g_verbose; }

void BandSpec::validate() const {
  if (!(gnyq > 0.0 && gnyq < 1.0))
    throw ParameterError("band '" + name + "': gnyq must lie in (0, 1)");
  if (!(gsd > 0.0)) throw ParameterError("band '" + name + "': gsd must be positive");
  if (!(min_value < max_value))
    throw ParameterError("band '" + name + "': value range min must be below max");
}

static std::vector<BandSpec> default_meta(int bands) {
  std::vector<BandSpec> meta(static_cast<std::size_t>(bands));
  for (int c = 0; c < bands; ++c) meta[static_cast<std::size_t>(c)].name = "b" + std::to_string(c);
  return meta;
}

static void check_dims(int bands, int height, int width) {
  if (bands < 1 || height < 1 || width < 1)
    throw DimensionError("raster dimensions must be positive, got " + std::to_string(bands) + "x" +
                         std::to_string(height) + "x" + std::to_string(width));
}

Raster::Raster(int bands, int height, int width, double fill)
    : bands_(bands), height_(height), width_(width) {
  check_dims(bands, height, width);
  data_.assign(static_cast<std::size_t>(bands) * height * width, fill);
  meta_ = default_meta(bands);
}

Raster::Raster(int bands, int height, int width, std::vector<double> data)
    : bands_(bands), height_(height), width_(width), data_(std::move(data)) {
  check_dims(bands, height, width);
  if (data_.size() != static_cast<std::size_t>(bands) * height * width)
    throw DimensionError("raster data length does not match C*H*W");
  meta_ = default_meta(bands);
}

std::span<double> Raster::band(int c) {
  return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
}

std::span<const double> Raster::band(int c) const {
  return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
}

bool Raster::same_shape(const Raster& other) const {
  return bands_ == other.bands_ && height_ == other.height_ && width_ == other.width_;
}

void Raster::validate() const {
  check_dims(bands_, height_, width_);
  if (data_.size() != static_cast<std::size_t>(bands_) * height_ * width_)
    throw DimensionError("raster data length does not match C*H*W");
  if (meta_.size() != static_cast<std::size_t>(bands_))
    throw DimensionError("band metadata count does not match band count");
  for (double v : data_)
    if (!std::isfinite(v)) throw DomainError("raster contains non-finite values");
}

Raster Raster::like(double fill) const {
  Raster out(bands_, height_, width_, fill);
  out.meta_ = meta_;
  return out;
}

Raster Raster::select_bands(std::span<const int> indices) const {
  Raster out(static_cast<int>(indices.size()), height_, width_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int c = indices[i];
    if (c < 0 || c >= bands_) throw DimensionError("band index out of range");
    auto src = band(c);
    std::copy(src.begin(), src.end(), out.band(static_cast<int>(i)).begin());
    out.meta_[i] = meta_[static_cast<std::size_t>(c)];
  }
  return out;
}

Raster Raster::stack(std::span<const Raster> parts) {
  if (parts.empty()) throw DimensionError("cannot stack zero rasters");
  int bands = 0;
  for (const auto& p : parts) {
    if (p.height() != parts[0].height() || p.width() != parts[0].width())
      throw DimensionError("stacked rasters must share spatial size");
    bands += p.bands();
  }
  Raster out(bands, parts[0].height(), parts[0].width());
  std::size_t offset = 0;
  int c = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data_.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
    for (int b = 0; b < p.bands(); ++b) out.meta_[static_cast<std::size_t>(c++)] = p.meta(b);
  }
  return out;
}

double Kernel2D::sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

Kernel2D Kernel2D::identity() { return Kernel2D{}; }

Kernel2D Kernel2D::box(int size) {
  Kernel2D k;
  k.size = size;
  k.weights.assign(static_cast<std::size_t>(size) * size, 1.0 / (static_cast<double>(size) * size));
  return k;
}

void Kernel2D::validate() const {
  if (size < 1 || size % 2 == 0) throw ParameterError("kernel size must be a positive odd integer");
  if (weights.size() != static_cast<std::size_t>(size) * size)
    throw DimensionError("kernel weight count does not match size*size");
}

}  // namespace s2fuse
