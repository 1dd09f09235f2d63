#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace s2fuse {

/// Per-band metadata carried alongside the pixel planes.
struct BandSpec {
  std::string name;
  double gsd = 10.0;   // ground sampling distance, meters
  double gnyq = 0.3;   // MTF amplitude at Nyquist, in (0, 1)
  double min_value = 0.0;
  double max_value = 255.0;

  void validate() const;
  double dynamic_range() const { return max_value - min_value; }
};

/// Planar band-major multi-band image. Pixels are kept as doubles in memory;
/// files store them as little-endian 32-bit floats.
class Raster {
 public:
  Raster() = default;
  Raster(int bands, int height, int width, double fill = 0.0);
  Raster(int bands, int height, int width, std::vector<double> data);

  int bands() const { return bands_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> band(int c);
  std::span<const double> band(int c) const;

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::vector<BandSpec>& meta() { return meta_; }
  const std::vector<BandSpec>& meta() const { return meta_; }
  BandSpec& meta(int c) { return meta_[static_cast<std::size_t>(c)]; }
  const BandSpec& meta(int c) const { return meta_[static_cast<std::size_t>(c)]; }

  /// Same band count and spatial size.
  bool same_shape(const Raster& other) const;

  /// Throws DomainError on NaN/Inf and DimensionError on size mismatch.
  void validate() const;

  /// Raster with the same shape/metadata and every pixel set to `fill`.
  Raster like(double fill = 0.0) const;

  /// Sub-raster holding the listed bands (metadata copied).
  Raster select_bands(std::span<const int> indices) const;

  /// Concatenate the bands of several rasters with a common spatial size.
  static Raster stack(std::span<const Raster> parts);

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int bands_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
  std::vector<BandSpec> meta_;
};

/// Odd-sized square convolution kernel, row-major weights.
struct Kernel2D {
  int size = 1;
  std::vector<double> weights{1.0};

  double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }
  double sum() const;
  static Kernel2D identity();
  static Kernel2D box(int size);
  void validate() const;
};

}  // namespace s2fuse
