#include "s2fuse/pansharpen.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "s2fuse/errors.hpp"
#include "s2fuse/fusion.hpp"
#include "s2fuse/resample.hpp"

namespace s2fuse {

PanMethod parse_pan_method(const std::string& text) {
  if (text == "gs") return PanMethod::GS;
  if (text == "ihs") return PanMethod::IHS;
  if (text == "pca") return PanMethod::PCA;
  if (text == "glp") return PanMethod::GLP;
  throw ParameterError("pansharpening method must be gs, ihs, pca or glp, got '" + text + "'");
}

std::string to_string(PanMethod m) {
  switch (m) {
    case PanMethod::GS: return "gs";
    case PanMethod::IHS: return "ihs";
    case PanMethod::PCA: return "pca";
    case PanMethod::GLP: return "glp";
  }
  return "?";
}

double population_mean(std::span<const double> v) {
  if (v.empty()) throw DimensionError("mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_cov(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("covariance of samples with different lengths");
  const double ma = population_mean(a);
  const double mb = population_mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size());
}

namespace {

// Variance below 1e-20 of the second moment: rounding noise of a constant.
bool numerically_constant(double var, double mean) { return !(var > 1e-20 * (mean * mean + var)); }

}  // namespace

std::vector<double> match_mean_std(std::span<const double> src, std::span<const double> target) {
  const double ms = population_mean(src);
  const double mt = population_mean(target);
  const double vs = population_cov(src, src);
  const double vt = population_cov(target, target);
  std::vector<double> out(src.size());
  if (numerically_constant(vs, ms)) {
    warn("histogram matching: constant source, mapping to the target mean");
    std::fill(out.begin(), out.end(), mt);
    return out;
  }
  const double k = std::sqrt(vt / vs);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = (src[i] - ms) * k + mt;
  return out;
}

namespace {

Raster upsample_checked(const Raster& ms_lr, const Raster& pan, int ratio) {
  if (ratio < 1) throw ParameterError("ratio must be >= 1");
  ms_lr.validate();
  pan.validate();
  if (pan.bands() != 1) throw DimensionError("pan must be single-band, got " + std::to_string(pan.bands()));
  if (pan.height() != ratio * ms_lr.height() || pan.width() != ratio * ms_lr.width())
    throw DimensionError("pan " + std::to_string(pan.height()) + "x" + std::to_string(pan.width()) + " is not " +
                         std::to_string(ratio) + "x the MS grid " + std::to_string(ms_lr.height()) + "x" +
                         std::to_string(ms_lr.width()));
  return resample_bicubic(ms_lr, Scale::up(ratio));
}

std::vector<double> band_mean_plane(const Raster& img) {
  std::vector<double> m(img.plane_size(), 0.0);
  for (int c = 0; c < img.bands(); ++c) {
    auto b = img.band(c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += b[i];
  }
  for (double& v : m) v /= img.bands();
  return m;
}

double regression_gain(std::span<const double> y, std::span<const double> x, const std::string& what) {
  const double var = population_cov(x, x);
  if (numerically_constant(var, population_mean(x))) {
    warn(what + ": zero-variance regressor, injection gain set to 0");
    return 0.0;
  }
  return population_cov(y, x) / var;
}

}  // namespace

Raster gs_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio, InjectionGains* gains) {
  Raster out = upsample_checked(ms_lr, pan, ratio);
  const std::vector<double> intensity = band_mean_plane(out);
  const std::vector<double> pan_hm = match_mean_std(pan.band(0), intensity);
  InjectionGains g;
  for (int c = 0; c < out.bands(); ++c) {
    auto b = out.band(c);
    const double gb = regression_gain(b, intensity, "GS");
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += gb * (pan_hm[i] - intensity[i]);
    g.g.push_back(gb);
  }
  if (gains) *gains = std::move(g);
  return out;
}

Raster ihs_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio) {
  Raster out = upsample_checked(ms_lr, pan, ratio);
  const std::vector<double> intensity = band_mean_plane(out);
  const std::vector<double> pan_hm = match_mean_std(pan.band(0), intensity);
  for (int c = 0; c < out.bands(); ++c) {
    auto b = out.band(c);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += pan_hm[i] - intensity[i];
  }
  return out;
}

namespace {

Eigen::MatrixXd band_covariance(const Raster& img, Eigen::VectorXd& mean) {
  const int k = img.bands();
  const auto n = static_cast<Eigen::Index>(img.plane_size());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(img.data().data(), k, n);
  mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(n);
}

}  // namespace

std::vector<std::vector<double>> principal_axes(const Raster& img, std::vector<double>* eigenvalues) {
  Eigen::VectorXd mean;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(band_covariance(img, mean));
  const int k = img.bands();
  std::vector<std::vector<double>> axes;
  if (eigenvalues) eigenvalues->clear();
  // Eigen sorts ascending; report descending.
  for (int j = k - 1; j >= 0; --j) {
    axes.emplace_back(eig.eigenvectors().col(j).data(), eig.eigenvectors().col(j).data() + k);
    if (eigenvalues) eigenvalues->push_back(eig.eigenvalues()(j));
  }
  return axes;
}

Raster pca_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio) {
  if (ms_lr.bands() < 2) throw DimensionError("PCA pansharpening needs at least 2 bands");
  Raster out = upsample_checked(ms_lr, pan, ratio);
  const int k = out.bands();
  const auto n = static_cast<Eigen::Index>(out.plane_size());
  Eigen::VectorXd mean;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(band_covariance(out, mean));
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (!(lambda(k - 1) > 0.0) || lambda(0) <= 1e-12 * lambda(k - 1))
    throw DegenerateInputError("PCA pansharpening: band covariance is rank-deficient");
  Eigen::MatrixXd v = eig.eigenvectors().rowwise().reverse();

  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(out.data().data(), k, n);
  Eigen::MatrixXd pcs = v.transpose() * (x.colwise() - mean);
  Eigen::Map<const Eigen::RowVectorXd> p(pan.data().data(), n);
  const double pan_mean = p.mean();
  if ((pcs.row(0).array() * (p.array() - pan_mean)).sum() < 0.0) {
    v.col(0) = -v.col(0);
    pcs.row(0) = -pcs.row(0);
  }
  const Eigen::RowVectorXd pc1 = pcs.row(0);
  const std::vector<double> matched =
      match_mean_std(pan.band(0), std::span<const double>(pc1.data(), static_cast<std::size_t>(n)));
  pcs.row(0) = Eigen::Map<const Eigen::RowVectorXd>(matched.data(), n);
  x = (v * pcs).colwise() + mean;
  return out;
}

Raster mtf_glp_pansharpen(const Raster& ms_lr, const Raster& pan, int ratio, std::span<const double> gnyq,
                          bool unit_gain, InjectionGains* gains) {
  Raster out = upsample_checked(ms_lr, pan, ratio);
  if (gnyq.size() != 1 && gnyq.size() != static_cast<std::size_t>(out.bands()))
    throw DimensionError("gnyq needs one value per band or a single shared value");
  InjectionGains g;
  for (int c = 0; c < out.bands(); ++c) {
    const double q = gnyq.size() == 1 ? gnyq[0] : gnyq[static_cast<std::size_t>(c)];
    const GlpDetail d = glp_detail(pan, mtf_sigma(q, ratio), ratio);
    auto b = out.band(c);
    const double gb = unit_gain ? 1.0 : regression_gain(b, d.p_low.band(0), "MTF-GLP");
    auto delta = d.delta.band(0);
    if (unit_gain) {
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = b[i] + delta[i];
    } else {
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += gb * delta[i];
    }
    g.g.push_back(gb);
  }
  if (gains) *gains = std::move(g);
  return out;
}

Raster pansharpen(PanMethod method, const Raster& ms_lr, const Raster& pan, int ratio,
                  std::span<const double> gnyq) {
  switch (method) {
    case PanMethod::GS: return gs_pansharpen(ms_lr, pan, ratio);
    case PanMethod::IHS: return ihs_pansharpen(ms_lr, pan, ratio);
    case PanMethod::PCA: return pca_pansharpen(ms_lr, pan, ratio);
    case PanMethod::GLP: {
      std::vector<double> q(gnyq.begin(), gnyq.end());
      if (q.empty())
        for (int c = 0; c < ms_lr.bands(); ++c) q.push_back(ms_lr.meta(c).gnyq);
      return mtf_glp_pansharpen(ms_lr, pan, ratio, q);
    }
  }
  throw ParameterError("unknown pansharpening method");
}

}  // namespace s2fuse
