#include "s2fuse/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "s2fuse/errors.hpp"
#include "s2fuse/raster_io.hpp"
#include "s2fuse/resample.hpp"

namespace s2fuse {

void BlurSpec::validate() const {
  if (size < 1 || size % 2 == 0) throw ParameterError("blur kernel size must be a positive odd integer");
  if (kind == BlurKind::Isotropic) {
    if (!(sigma > 0.0)) throw ParameterError("isotropic blur sigma must be positive");
  } else {
    if (!(lambda1 > 0.0 && lambda2 > 0.0)) throw ParameterError("anisotropic eigenvalues must be positive");
    if (theta < 0.0 || theta > std::numbers::pi) throw ParameterError("blur rotation must lie in [0, pi]");
  }
}

BlurSpec BlurSpec::isotropic(double sigma, int size) {
  BlurSpec s;
  s.kind = BlurKind::Isotropic;
  s.sigma = sigma;
  s.size = size;
  return s;
}

BlurSpec BlurSpec::anisotropic(double lambda1, double lambda2, double theta, int size) {
  BlurSpec s;
  s.kind = BlurKind::Anisotropic;
  s.lambda1 = lambda1;
  s.lambda2 = lambda2;
  s.theta = theta;
  s.size = size;
  return s;
}

void DegradationSpec::validate() const {
  if (scale < 1) throw ParameterError("degradation scale must be >= 1");
  if (noise_sigma < 0.0) throw ParameterError("noise sigma must be non-negative");
  if (!(k > 0.0)) throw ParameterError("dynamic range constant k must be positive");
  if (gammas)
    for (double g : *gammas)
      if (!(g > 0.0)) throw ParameterError("gamma values must be positive");
  if (blur) blur->validate();
}

BlurMode BlurMode::parse(const std::string& text) {
  if (text == "train") return train();
  if (text == "val" || text == "validation") return validation();
  if (text.rfind("fixed:", 0) == 0) {
    try {
      const double s = std::stod(text.substr(6));
      if (!(s > 0.0)) throw ParameterError("fixed blur sigma must be positive");
      return fixed(s);
    } catch (const std::invalid_argument&) {
      throw ParameterError("bad fixed blur sigma in '" + text + "'");
    }
  }
  throw ParameterError("blur mode must be train, val or fixed:<sigma>, got '" + text + "'");
}

Raster harmonize(const Raster& img, const std::vector<double>& gammas, double k) {
  if (!(k > 0.0)) throw ParameterError("dynamic range constant k must be positive");
  if (gammas.size() != static_cast<std::size_t>(img.bands()))
    throw DimensionError("need one gamma per band: got " + std::to_string(gammas.size()) + " for " +
                         std::to_string(img.bands()) + " bands");
  for (double g : gammas)
    if (!(g > 0.0)) throw ParameterError("gamma values must be positive");
  Raster out = img.like();
  for (int c = 0; c < img.bands(); ++c) {
    const double inv_gamma = 1.0 / gammas[static_cast<std::size_t>(c)];
    auto src = img.band(c);
    auto dst = out.band(c);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double v = src[i];
      if (v < 0.0 || v > k) throw DomainError("harmonize: pixel value outside [0, k]");
      dst[i] = inv_gamma == 1.0 ? v : std::pow(v / k, inv_gamma) * k;
    }
  }
  return out;
}

Kernel2D gaussian_kernel(const BlurSpec& spec) {
  spec.validate();
  // Inverse covariance entries; the isotropic case is the diagonal special case.
  double a, b, c;
  if (spec.kind == BlurKind::Isotropic) {
    const double inv = 1.0 / (spec.sigma * spec.sigma);
    a = inv;
    b = 0.0;
    c = inv;
  } else {
    const double ct = std::cos(spec.theta);
    const double st = std::sin(spec.theta);
    const double i1 = 1.0 / spec.lambda1;
    const double i2 = 1.0 / spec.lambda2;
    // R diag(1/l1, 1/l2) R^T
    a = ct * ct * i1 + st * st * i2;
    b = ct * st * (i1 - i2);
    c = st * st * i1 + ct * ct * i2;
  }
  Kernel2D k;
  k.size = spec.size;
  k.weights.resize(static_cast<std::size_t>(spec.size) * spec.size);
  const int half = spec.size / 2;
  double total = 0.0;
  for (int y = -half; y <= half; ++y) {
    for (int x = -half; x <= half; ++x) {
      // x is the column offset, y the row offset.
      const double q = a * x * x + 2.0 * b * x * y + c * y * y;
      const double w = std::exp(-0.5 * q);
      k.weights[static_cast<std::size_t>(y + half) * spec.size + (x + half)] = w;
      total += w;
    }
  }
  for (double& w : k.weights) w /= total;
  return k;
}

Kernel2D gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return Kernel2D::identity();
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  return gaussian_kernel(BlurSpec::isotropic(sigma, 2 * half + 1));
}

BlurSpec sample_blur(SeededRng& rng, const BlurMode& mode) {
  switch (mode.kind) {
    case BlurMode::Kind::Train: {
      const double l1 = rng.uniform(kLambdaMin, kLambdaMax);
      const double l2 = rng.uniform(kLambdaMin, kLambdaMax);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      return BlurSpec::anisotropic(l1, l2, theta, kBlurKernelSize);
    }
    case BlurMode::Kind::Validation:
      return BlurSpec::isotropic(rng.uniform(kIsoSigmaMin, kIsoSigmaMax), kBlurKernelSize);
    case BlurMode::Kind::Fixed:
      return BlurSpec::isotropic(mode.sigma, kBlurKernelSize);
  }
  throw ParameterError("unknown blur mode");
}

Raster degrade(const Raster& img, const DegradationSpec& spec, SeededRng& rng) {
  spec.validate();
  if (img.height() % spec.scale != 0 || img.width() % spec.scale != 0)
    throw DimensionError("degrade: scale " + std::to_string(spec.scale) + " does not divide " +
                         std::to_string(img.height()) + "x" + std::to_string(img.width()));
  Raster cur = img;
  if (spec.harmonize && spec.gammas) cur = harmonize(cur, *spec.gammas, spec.k);
  if (spec.blur) cur = conv2d_reflect(cur, gaussian_kernel(*spec.blur));
  if (spec.scale > 1) cur = resample_bicubic(cur, Scale::down(spec.scale));
  if (spec.noise_sigma > 0.0) {
    for (int c = 0; c < cur.bands(); ++c) {
      const double sd = spec.noise_sigma / 255.0 * cur.meta(c).dynamic_range();
      for (double& v : cur.band(c)) v += sd * rng.normal();
    }
  }
  return cur;
}

WaldPair wald_pair(const Raster& ms, int ratio, const std::optional<std::vector<double>>& sigmas) {
  if (ratio < 1) throw ParameterError("Wald ratio must be >= 1");
  if (ms.height() % ratio != 0 || ms.width() % ratio != 0)
    throw DimensionError("Wald ratio " + std::to_string(ratio) + " does not divide " +
                         std::to_string(ms.height()) + "x" + std::to_string(ms.width()));
  if (!sigmas) return WaldPair{boxcar_downsample(ms, ratio), std::cref(ms)};
  if (sigmas->size() != static_cast<std::size_t>(ms.bands()))
    throw DimensionError("Wald blur needs one sigma per band");
  Raster blurred = ms.like();
  for (int c = 0; c < ms.bands(); ++c) {
    Kernel2D k = gaussian_kernel((*sigmas)[static_cast<std::size_t>(c)]);
    if (k.size > 2 * std::min(ms.height(), ms.width()) + 1)
      throw DimensionError("Wald blur kernel too large for the raster");
    conv2d_reflect_plane(ms.band(c), ms.height(), ms.width(), k, blurred.band(c));
  }
  return WaldPair{boxcar_downsample(blurred, ratio), std::cref(ms)};
}

std::vector<double> read_gamma_file(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<double> gammas;
  std::string line;
  while (std::getline(in, line)) {
    auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    try {
      gammas.push_back(std::stod(line.substr(start)));
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad gamma value '" + line + "'");
    }
    if (!(gammas.back() > 0.0)) throw ParameterError(path.string() + ": gamma values must be positive");
  }
  if (gammas.empty()) throw IoError(path.string() + ": no gamma values");
  return gammas;
}

}  // namespace s2fuse
