#pragma once

#include <span>
#include <vector>

#include "s2fuse/raster.hpp"

namespace s2fuse {

/// Positive rational scale factor (output size / input size).
struct Scale {
  int num = 1;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  static Scale up(int r) { return {r, 1}; }
  static Scale down(int r) { return {1, r}; }
};

enum class Interp { Bicubic, Bilinear };

/// Coordinate mapping between output and input pixel grids.
///  PixelCenter: src = (i + 0.5) / scale - 0.5
///  AlignCorners: src = i * (in - 1) / (out - 1)
enum class Align { PixelCenter, AlignCorners };

/// Catmull-Rom cubic weight (a = -0.5).
double cubic_weight(double t);

/// Mirror an out-of-range index back into [0, n) with half-sample symmetric
/// reflection (-1 -> 0, n -> n-1), folding repeatedly for far indices.
int reflect_index(int i, int n);

/// Output size for a scale applied to `in`, rounded to nearest.
int scaled_size(int in, Scale scale);

/// Per-axis interpolation taps: output i reads taps[i*ntaps + k] with
/// weights[i*ntaps + k]. Shared by the forward resampler and its adjoint.
struct AxisTaps {
  int in = 0;
  int out = 0;
  int ntaps = 0;
  std::vector<int> index;
  std::vector<double> weight;
};

AxisTaps make_axis_taps(int in, int out, Scale scale, Interp interp, Align align);

// Plane-level kernels on a single H x W band. The adjoint variants accumulate
// into `grad_in` and are used by the differentiation engine.
void conv2d_reflect_plane(std::span<const double> in, int height, int width, const Kernel2D& k,
                          std::span<double> out);
void conv2d_reflect_plane_adjoint(std::span<const double> grad_out, int height, int width,
                                  const Kernel2D& k, std::span<double> grad_in);
void boxcar_plane(std::span<const double> in, int height, int width, int r, std::span<double> out);
void boxcar_plane_adjoint(std::span<const double> grad_out, int height, int width, int r,
                          std::span<double> grad_in);
void resample_plane(std::span<const double> in, const AxisTaps& rows, const AxisTaps& cols,
                    std::span<double> out);
void resample_plane_adjoint(std::span<const double> grad_out, const AxisTaps& rows,
                            const AxisTaps& cols, std::span<double> grad_in);

/// Convolve every band with `k`, reflecting at the borders.
/// Requires k.size <= 2 * min(H, W) + 1.
Raster conv2d_reflect(const Raster& img, const Kernel2D& k);

/// Exact r x r block means. H and W must be divisible by r.
Raster boxcar_downsample(const Raster& img, int r);

/// Separable Catmull-Rom resampling with reflected borders.
Raster resample_bicubic(const Raster& img, Scale scale, Align align = Align::PixelCenter);

/// Separable linear resampling with reflected borders.
Raster resample_bilinear(const Raster& img, Scale scale, Align align = Align::PixelCenter);

/// Space-to-depth: C x H x W -> (C r^2) x (H/r) x (W/r). Output channel
/// c*r*r + dy*r + dx holds sub-pixel (dy, dx) of input channel c.
Raster pixel_fold(const Raster& img, int r);

/// Inverse of pixel_fold.
Raster pixel_unfold(const Raster& img, int r);

/// Each pixel replicated into an r x r block.
Raster replicate_upsample(const Raster& img, int r);

}  // namespace s2fuse
