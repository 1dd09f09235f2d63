#pragma once

#include <optional>
#include <string>
#include <vector>

#include "s2fuse/raster.hpp"

namespace s2fuse {

// Reference-argument convention: where a metric is asymmetric the first
// raster is the reference.

double mse(const Raster& a, const Raster& b);
double mse_band(const Raster& a, const Raster& b, int band);

/// 10 log10(peak^2 / mse); +infinity when mse == 0.
double psnr(const Raster& a, const Raster& b, double peak);
double psnr_band(const Raster& a, const Raster& b, int band, double peak);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) averaged over
/// valid window positions; multi-band value is the plain band mean.
double ssim(const Raster& a, const Raster& b, double peak);
double ssim_band(const Raster& a, const Raster& b, int band, double peak);

/// 1 - sum (ref - pred)^2 / sum (ref - mean(ref))^2 over all values.
double r2(const Raster& ref, const Raster& pred);
double r2_band(const Raster& ref, const Raster& pred, int band);

/// Pearson correlation of the flattened values.
double ncc(const Raster& a, const Raster& b);
double ncc_band(const Raster& a, const Raster& b, int band);

/// 100 / ratio * sqrt(mean_b (RMSE_b / mean(ref_b))^2).
double ergas(const Raster& ref, const Raster& pred, double ratio);

/// Mean per-pixel spectral angle in degrees; pixels where either spectrum
/// is zero are skipped with a warning.
double sad(const Raster& a, const Raster& b);

/// Mean |boxcar_down(sr, ratio) - lr|.
double reflectance_consistency(const Raster& sr, const Raster& lr, int ratio);

struct Shift {
  int dy = 0;
  int dx = 0;
  bool operator==(const Shift&) const = default;
};

/// Integer shift (dy, dx) such that b(y, x) ~ a(y - dy, x - dx) circularly,
/// from the peak of the normalized cross-power spectrum. Shifts are wrapped
/// to [-H/2, H/2) x [-W/2, W/2). Single-band inputs only.
Shift phase_correlation_shift(const Raster& a, const Raster& b);

struct BandMetrics {
  std::string name;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double r2 = 0.0;
  double ncc = 0.0;
};

struct MetricsReport {
  std::vector<BandMetrics> per_band;
  double ergas = 0.0;
  double sad_mean = 0.0;
  std::optional<double> reflectance_l1;
  Shift spatial_shift;

  std::string table() const;
  std::string key_values() const;
};

/// Full comparison of `pred` against `ref`. When `lr` is given the
/// reflectance consistency of `pred` against it is included. The spatial
/// shift is measured on the band means.
MetricsReport evaluate(const Raster& ref, const Raster& pred, double ratio, double peak,
                       const Raster* lr = nullptr);

/// Average rank per method. scores[m][k] is method m on metric k;
/// higher_better[k] orients metric k. Ties share the mean of their ranks.
std::vector<double> average_rank(const std::vector<std::vector<double>>& scores,
                                 const std::vector<bool>& higher_better);

}  // namespace s2fuse
