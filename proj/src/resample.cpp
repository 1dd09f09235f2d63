#include "s2fuse/resample.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "s2fuse/errors.hpp"

namespace s2fuse {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

int scaled_size(int in, Scale scale) {
  if (scale.num <= 0 || scale.den <= 0) throw ParameterError("scale must be positive");
  return static_cast<int>(std::lround(static_cast<double>(in) * scale.num / scale.den));
}

AxisTaps make_axis_taps(int in, int out, Scale scale, Interp interp, Align align) {
  AxisTaps taps;
  taps.in = in;
  taps.out = out;
  taps.ntaps = interp == Interp::Bicubic ? 4 : 2;
  taps.index.resize(static_cast<std::size_t>(out) * taps.ntaps);
  taps.weight.resize(static_cast<std::size_t>(out) * taps.ntaps);
  const double s = scale.value();
  for (int i = 0; i < out; ++i) {
    double src;
    if (align == Align::AlignCorners)
      src = out > 1 ? static_cast<double>(i) * (in - 1) / (out - 1) : 0.0;
    else
      src = (i + 0.5) / s - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    const std::size_t o = static_cast<std::size_t>(i) * taps.ntaps;
    if (interp == Interp::Bicubic) {
      for (int k = 0; k < 4; ++k) {
        taps.index[o + k] = reflect_index(base - 1 + k, in);
        taps.weight[o + k] = cubic_weight(frac - (k - 1));
      }
    } else {
      taps.index[o] = reflect_index(base, in);
      taps.index[o + 1] = reflect_index(base + 1, in);
      taps.weight[o] = 1.0 - frac;
      taps.weight[o + 1] = frac;
    }
  }
  return taps;
}

void conv2d_reflect_plane(std::span<const double> in, int height, int width, const Kernel2D& k,
                          std::span<double> out) {
  const int half = k.size / 2;
  // Precomputed reflected coordinates keep the inner loop branch-free.
  std::vector<int> ry(static_cast<std::size_t>(height + 2 * half));
  std::vector<int> rx(static_cast<std::size_t>(width + 2 * half));
  for (int i = 0; i < height + 2 * half; ++i) ry[static_cast<std::size_t>(i)] = reflect_index(i - half, height);
  for (int i = 0; i < width + 2 * half; ++i) rx[static_cast<std::size_t>(i)] = reflect_index(i - half, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < k.size; ++dy) {
        const double* row = in.data() + static_cast<std::size_t>(ry[static_cast<std::size_t>(y + dy)]) * width;
        const double* kw = k.weights.data() + static_cast<std::size_t>(dy) * k.size;
        for (int dx = 0; dx < k.size; ++dx) acc += kw[dx] * row[rx[static_cast<std::size_t>(x + dx)]];
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
}

void conv2d_reflect_plane_adjoint(std::span<const double> grad_out, int height, int width,
                                  const Kernel2D& k, std::span<double> grad_in) {
  const int half = k.size / 2;
  std::vector<int> ry(static_cast<std::size_t>(height + 2 * half));
  std::vector<int> rx(static_cast<std::size_t>(width + 2 * half));
  for (int i = 0; i < height + 2 * half; ++i) ry[static_cast<std::size_t>(i)] = reflect_index(i - half, height);
  for (int i = 0; i < width + 2 * half; ++i) rx[static_cast<std::size_t>(i)] = reflect_index(i - half, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double g = grad_out[static_cast<std::size_t>(y) * width + x];
      if (g == 0.0) continue;
      for (int dy = 0; dy < k.size; ++dy) {
        double* row = grad_in.data() + static_cast<std::size_t>(ry[static_cast<std::size_t>(y + dy)]) * width;
        const double* kw = k.weights.data() + static_cast<std::size_t>(dy) * k.size;
        for (int dx = 0; dx < k.size; ++dx) row[rx[static_cast<std::size_t>(x + dx)]] += kw[dx] * g;
      }
    }
  }
}

void boxcar_plane(std::span<const double> in, int height, int width, int r, std::span<double> out) {
  const int oh = height / r;
  const int ow = width / r;
  const double inv = 1.0 / (static_cast<double>(r) * r);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < r; ++dy) {
        const double* row = in.data() + static_cast<std::size_t>(y * r + dy) * width + static_cast<std::size_t>(x) * r;
        for (int dx = 0; dx < r; ++dx) acc += row[dx];
      }
      out[static_cast<std::size_t>(y) * ow + x] = acc * inv;
    }
  }
}

void boxcar_plane_adjoint(std::span<const double> grad_out, int height, int width, int r,
                          std::span<double> grad_in) {
  const int ow = width / r;
  const double inv = 1.0 / (static_cast<double>(r) * r);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      grad_in[static_cast<std::size_t>(y) * width + x] +=
          grad_out[static_cast<std::size_t>(y / r) * ow + x / r] * inv;
}

void resample_plane(std::span<const double> in, const AxisTaps& rows, const AxisTaps& cols,
                    std::span<double> out) {
  const int ih = rows.in;
  const int iw = cols.in;
  const int ow = cols.out;
  std::vector<double> tmp(static_cast<std::size_t>(ih) * ow);
  for (int y = 0; y < ih; ++y) {
    const double* src = in.data() + static_cast<std::size_t>(y) * iw;
    double* dst = tmp.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      const std::size_t o = static_cast<std::size_t>(x) * cols.ntaps;
      for (int k = 0; k < cols.ntaps; ++k) acc += cols.weight[o + k] * src[cols.index[o + k]];
      dst[x] = acc;
    }
  }
  for (int y = 0; y < rows.out; ++y) {
    const std::size_t o = static_cast<std::size_t>(y) * rows.ntaps;
    double* dst = out.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < rows.ntaps; ++k)
        acc += rows.weight[o + k] * tmp[static_cast<std::size_t>(rows.index[o + k]) * ow + x];
      dst[x] = acc;
    }
  }
}

void resample_plane_adjoint(std::span<const double> grad_out, const AxisTaps& rows,
                            const AxisTaps& cols, std::span<double> grad_in) {
  const int ih = rows.in;
  const int iw = cols.in;
  const int ow = cols.out;
  std::vector<double> tmp(static_cast<std::size_t>(ih) * ow, 0.0);
  for (int y = 0; y < rows.out; ++y) {
    const std::size_t o = static_cast<std::size_t>(y) * rows.ntaps;
    const double* g = grad_out.data() + static_cast<std::size_t>(y) * ow;
    for (int k = 0; k < rows.ntaps; ++k) {
      double* dst = tmp.data() + static_cast<std::size_t>(rows.index[o + k]) * ow;
      const double w = rows.weight[o + k];
      for (int x = 0; x < ow; ++x) dst[x] += w * g[x];
    }
  }
  for (int y = 0; y < ih; ++y) {
    const double* g = tmp.data() + static_cast<std::size_t>(y) * ow;
    double* dst = grad_in.data() + static_cast<std::size_t>(y) * iw;
    for (int x = 0; x < ow; ++x) {
      const std::size_t o = static_cast<std::size_t>(x) * cols.ntaps;
      for (int k = 0; k < cols.ntaps; ++k) dst[cols.index[o + k]] += cols.weight[o + k] * g[x];
    }
  }
}

Raster conv2d_reflect(const Raster& img, const Kernel2D& k) {
  k.validate();
  if (k.size > 2 * std::min(img.height(), img.width()) + 1)
    throw DimensionError("kernel of size " + std::to_string(k.size) + " too large for " +
                         std::to_string(img.height()) + "x" + std::to_string(img.width()) + " raster");
  Raster out = img.like();
  for (int c = 0; c < img.bands(); ++c)
    conv2d_reflect_plane(img.band(c), img.height(), img.width(), k, out.band(c));
  return out;
}

Raster boxcar_downsample(const Raster& img, int r) {
  if (r < 1) throw ParameterError("boxcar stride must be >= 1");
  if (img.height() % r != 0 || img.width() % r != 0)
    throw DimensionError("raster " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " not divisible by " + std::to_string(r));
  Raster out(img.bands(), img.height() / r, img.width() / r);
  out.meta() = img.meta();
  for (int c = 0; c < img.bands(); ++c) {
    boxcar_plane(img.band(c), img.height(), img.width(), r, out.band(c));
    out.meta(c).gsd = img.meta(c).gsd * r;
  }
  return out;
}

static Raster resample(const Raster& img, Scale scale, Interp interp, Align align) {
  const int oh = scaled_size(img.height(), scale);
  const int ow = scaled_size(img.width(), scale);
  if (oh < 1 || ow < 1) throw DimensionError("resampling produces an empty raster");
  const AxisTaps rows = make_axis_taps(img.height(), oh, scale, interp, align);
  const AxisTaps cols = make_axis_taps(img.width(), ow, scale, interp, align);
  Raster out(img.bands(), oh, ow);
  out.meta() = img.meta();
  for (int c = 0; c < img.bands(); ++c) {
    resample_plane(img.band(c), rows, cols, out.band(c));
    out.meta(c).gsd = img.meta(c).gsd / scale.value();
  }
  return out;
}

Raster resample_bicubic(const Raster& img, Scale scale, Align align) {
  return resample(img, scale, Interp::Bicubic, align);
}

Raster resample_bilinear(const Raster& img, Scale scale, Align align) {
  return resample(img, scale, Interp::Bilinear, align);
}

Raster pixel_fold(const Raster& img, int r) {
  if (r < 1) throw ParameterError("fold factor must be >= 1");
  if (img.height() % r != 0 || img.width() % r != 0)
    throw DimensionError("pixel_fold requires H and W divisible by r");
  const int oh = img.height() / r;
  const int ow = img.width() / r;
  Raster out(img.bands() * r * r, oh, ow);
  for (int c = 0; c < img.bands(); ++c) {
    for (int dy = 0; dy < r; ++dy) {
      for (int dx = 0; dx < r; ++dx) {
        const int oc = c * r * r + dy * r + dx;
        out.meta(oc) = img.meta(c);
        out.meta(oc).name = img.meta(c).name + "_" + std::to_string(dy * r + dx);
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) out.at(oc, y, x) = img.at(c, y * r + dy, x * r + dx);
      }
    }
  }
  return out;
}

Raster pixel_unfold(const Raster& img, int r) {
  if (r < 1) throw ParameterError("unfold factor must be >= 1");
  if (img.bands() % (r * r) != 0) throw DimensionError("pixel_unfold requires C divisible by r^2");
  const int oc_count = img.bands() / (r * r);
  Raster out(oc_count, img.height() * r, img.width() * r);
  for (int c = 0; c < oc_count; ++c) {
    out.meta(c) = img.meta(c * r * r);
    const std::string& n = out.meta(c).name;
    if (r > 1 && n.size() > 2 && n.ends_with("_0")) out.meta(c).name = n.substr(0, n.size() - 2);
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx)
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            out.at(c, y * r + dy, x * r + dx) = img.at(c * r * r + dy * r + dx, y, x);
  }
  return out;
}

Raster replicate_upsample(const Raster& img, int r) {
  if (r < 1) throw ParameterError("replication factor must be >= 1");
  Raster out(img.bands(), img.height() * r, img.width() * r);
  out.meta() = img.meta();
  for (int c = 0; c < img.bands(); ++c) {
    out.meta(c).gsd = img.meta(c).gsd / r;
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = img.at(c, y / r, x / r);
  }
  return out;
}

}  // namespace s2fuse
