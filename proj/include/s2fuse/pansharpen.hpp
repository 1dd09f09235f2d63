#pragma once

#include <span>
#include <string>
#include <vector>

#include "s2fuse/raster.hpp"

namespace s2fuse {

/// Per-band injection coefficients of the last pansharpening call.
struct InjectionGains {
  std::vector<double> g;
};

enum class PanMethod { GS, IHS, PCA, GLP };

PanMethod parse_pan_method(const std::string& text);
std::string to_string(PanMethod m);

/// Population statistics shared by the methods and their tests.
double population_mean(std::span<const double> v);
double population_cov(std::span<const double> a, std::span<const double> b);

/// Global mean/std matching of `src` to `target`. A constant `src` maps to
/// the target mean (with a warning).
std::vector<double> match_mean_std(std::span<const double> src, std::span<const double> target);

// Every method takes ms_lr on the coarse grid and a single-band pan whose
// size is `ratio` times larger; x~ below is the bicubic upsampling of ms_lr.
// Zero-variance regressors give gain 0 with a warning.

/// Gram-Schmidt (mode 1): I = band mean of x~, g_b = cov(x~_b, I)/var(I),
/// out_b = x~_b + g_b (pan_hm - I).
Raster gs_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio, InjectionGains* gains = nullptr);

/// Generalized IHS: out_b = x~_b + (pan_hm - I).
Raster ihs_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio);

/// PCA substitution of the first component by the pan matched to it.
/// PC1 is oriented so that cov(PC1, pan) >= 0. Rank-deficient covariance
/// throws DegenerateInputError.
Raster pca_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio);

/// Principal axes (columns, descending eigenvalue) of the band covariance of
/// `img`, as used by pca_pansharpen before orientation.
std::vector<std::vector<double>> principal_axes(const Raster& img, std::vector<double>* eigenvalues = nullptr);

/// MTF-GLP with regression injection: p~_b = glp_detail(pan, mtf_sigma(gnyq_b)).p_low,
/// g_b = cov(x~_b, p~_b)/var(p~_b), out_b = x~_b + g_b (pan - p~_b). With
/// unit_gain every g_b is 1. `gnyq` holds one value per band or a single
/// shared value.
Raster mtf_glp_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio, std::span<const double> gnyq,
                          bool unit_gain = false, InjectionGains* gains = nullptr);

/// Dispatch by method; `gnyq` is only read by GLP (empty = band metadata).
Raster pansharpen(PanMethod method, const Raster& ms_lr, const Raster& pan, int ratio,
                  std::span<const double> gnyq = {});

}  // namespace s2fuse
