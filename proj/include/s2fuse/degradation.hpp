#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "s2fuse/raster.hpp"
#include "s2fuse/rng.hpp"

namespace s2fuse {

enum class BlurKind { Isotropic, Anisotropic };

/// Gaussian blur parameterization. For anisotropic kernels the covariance is
/// R(theta) diag(lambda1, lambda2) R(theta)^T.
struct BlurSpec {
  BlurKind kind = BlurKind::Isotropic;
  int size = 21;
  double sigma = 2.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double theta = 0.0;

  void validate() const;
  static BlurSpec isotropic(double sigma, int size = 21);
  static BlurSpec anisotropic(double lambda1, double lambda2, double theta, int size = 21);
};

struct DegradationSpec {
  std::optional<BlurSpec> blur;
  int scale = 1;
  double noise_sigma = 0.0;  // 0-255 scale
  bool harmonize = true;     // ablation switch
  std::optional<std::vector<double>> gammas;
  double k = 255.0;

  void validate() const;
};

/// Blur sampling regimes: anisotropic for training, isotropic for validation,
/// and a fixed isotropic sigma for the fixed-kernel ablation.
struct BlurMode {
  enum class Kind { Train, Validation, Fixed } kind = Kind::Train;
  double sigma = 3.0;

  static BlurMode train() { return {Kind::Train, 0.0}; }
  static BlurMode validation() { return {Kind::Validation, 0.0}; }
  static BlurMode fixed(double sigma) { return {Kind::Fixed, sigma}; }
  /// Parses "train", "val"/"validation" or "fixed:<sigma>".
  static BlurMode parse(const std::string& text);
};

// Sampling ranges for blind blur.
inline constexpr double kIsoSigmaMin = 2.0;
inline constexpr double kIsoSigmaMax = 4.0;
inline constexpr double kLambdaMin = 0.2;
inline constexpr double kLambdaMax = 4.0;
inline constexpr int kBlurKernelSize = 21;

/// Per-channel power law: out = (in / k)^(1 / gamma_c) * k.
Raster harmonize(const Raster& img, const std::vector<double>& gammas, double k = 255.0);

/// Sampled and normalized Gaussian kernel on integer offsets.
Kernel2D gaussian_kernel(const BlurSpec& spec);

/// Isotropic Gaussian with support 2*ceil(3 sigma)+1 (at least 1).
Kernel2D gaussian_kernel(double sigma);

BlurSpec sample_blur(SeededRng& rng, const BlurMode& mode);

/// Optional harmonization, blur, bicubic downsampling by spec.scale, then
/// additive Gaussian noise (noise_sigma on a 0-255 scale, rescaled to each
/// band's declared value range).
Raster degrade(const Raster& img, const DegradationSpec& spec, SeededRng& rng);

/// Wald-protocol pair: `target` refers to the caller's raster unchanged,
/// `input` is an optional per-band Gaussian blur followed by r x r boxcar
/// averaging.
struct WaldPair {
  Raster input;
  std::reference_wrapper<const Raster> target;
};

WaldPair wald_pair(const Raster& ms, int ratio, const std::optional<std::vector<double>>& sigmas = std::nullopt);

/// Gamma calibration file: one gamma per line; blank and '#' lines ignored.
std::vector<double> read_gamma_file(const std::filesystem::path& path);

}  // namespace s2fuse
