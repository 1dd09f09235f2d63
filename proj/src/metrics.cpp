#include "s2fuse/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "s2fuse/errors.hpp"
#include "s2fuse/resample.hpp"

namespace s2fuse {

namespace {

void require_same(const Raster& a, const Raster& b, const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": rasters differ in shape (" + std::to_string(a.bands()) + "x" +
                         std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                         std::to_string(b.bands()) + "x" + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + ")");
}

void require_band(const Raster& a, int band) {
  if (band < 0 || band >= a.bands()) throw DimensionError("band index out of range");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sq_err(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double r2_of(std::span<const double> ref, std::span<const double> pred) {
  const double mu = mean_of(ref);
  double ss = 0.0;
  for (double x : ref) ss += (x - mu) * (x - mu);
  if (!(ss > 0.0)) throw DegenerateInputError("R2: reference has zero variance");
  return 1.0 - sq_err(ref, pred) / ss;
}

double ncc_of(std::span<const double> a, std::span<const double> b) {
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DegenerateInputError("NCC: zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> ssim_window() {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  std::vector<double> w(k * k);
  double total = 0.0;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) {
      const double dy = y - k / 2, dx = x - k / 2;
      total += (w[static_cast<std::size_t>(y * k + x)] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)));
    }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double mse(const Raster& a, const Raster& b) {
  require_same(a, b, "mse");
  return sq_err(a.data(), b.data()) / static_cast<double>(a.size());
}

double mse_band(const Raster& a, const Raster& b, int band) {
  require_same(a, b, "mse");
  require_band(a, band);
  return sq_err(a.band(band), b.band(band)) / static_cast<double>(a.plane_size());
}

namespace {

double psnr_from(double m, double peak) {
  if (!(peak > 0.0)) throw ParameterError("PSNR peak must be positive");
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

}  // namespace

double psnr(const Raster& a, const Raster& b, double peak) { return psnr_from(mse(a, b), peak); }

double psnr_band(const Raster& a, const Raster& b, int band, double peak) {
  return psnr_from(mse_band(a, b, band), peak);
}

double ssim_band(const Raster& a, const Raster& b, int band, double peak) {
  require_same(a, b, "ssim");
  require_band(a, band);
  constexpr int k = 11;
  if (a.height() < k || a.width() < k) throw DimensionError("SSIM needs images of at least 11x11");
  if (!(peak > 0.0)) throw ParameterError("SSIM peak must be positive");
  static const std::vector<double> win = ssim_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const int w = a.width();
  auto pa = a.band(band);
  auto pb = b.band(band);
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + k <= a.height(); ++y0) {
    for (int x0 = 0; x0 + k <= w; ++x0) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
          const double wt = win[static_cast<std::size_t>(y * k + x)];
          const std::size_t i = static_cast<std::size_t>(y0 + y) * w + (x0 + x);
          ma += wt * pa[i];
          mb += wt * pb[i];
          saa += wt * pa[i] * pa[i];
          sbb += wt * pb[i] * pb[i];
          sab += wt * pa[i] * pb[i];
        }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

double ssim(const Raster& a, const Raster& b, double peak) {
  require_same(a, b, "ssim");
  double s = 0.0;
  for (int c = 0; c < a.bands(); ++c) s += ssim_band(a, b, c, peak);
  return s / a.bands();
}

double r2(const Raster& ref, const Raster& pred) {
  require_same(ref, pred, "r2");
  return r2_of(ref.data(), pred.data());
}

double r2_band(const Raster& ref, const Raster& pred, int band) {
  require_same(ref, pred, "r2");
  require_band(ref, band);
  return r2_of(ref.band(band), pred.band(band));
}

double ncc(const Raster& a, const Raster& b) {
  require_same(a, b, "ncc");
  return ncc_of(a.data(), b.data());
}

double ncc_band(const Raster& a, const Raster& b, int band) {
  require_same(a, b, "ncc");
  require_band(a, band);
  return ncc_of(a.band(band), b.band(band));
}

double ergas(const Raster& ref, const Raster& pred, double ratio) {
  require_same(ref, pred, "ergas");
  if (!(ratio > 0.0)) throw ParameterError("ERGAS ratio must be positive");
  double acc = 0.0;
  for (int c = 0; c < ref.bands(); ++c) {
    const double mu = mean_of(ref.band(c));
    if (mu == 0.0) throw DegenerateInputError("ERGAS: reference band " + std::to_string(c) + " has zero mean");
    const double rmse2 = sq_err(ref.band(c), pred.band(c)) / static_cast<double>(ref.plane_size());
    acc += rmse2 / (mu * mu);
  }
  return 100.0 / ratio * std::sqrt(acc / ref.bands());
}

double sad(const Raster& a, const Raster& b) {
  require_same(a, b, "sad");
  const std::size_t n = a.plane_size();
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double na = 0.0, nb = 0.0;
    for (int c = 0; c < a.bands(); ++c) {
      na += a.band(c)[i] * a.band(c)[i];
      nb += b.band(c)[i] * b.band(c)[i];
    }
    if (na == 0.0 || nb == 0.0) continue;
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    // Half-angle form 2 atan2(|u - v|, |u + v|) on unit vectors; arccos of
    // the cosine loses precision for nearly parallel spectra.
    double diff = 0.0, sum = 0.0;
    for (int c = 0; c < a.bands(); ++c) {
      const double u = a.band(c)[i] / na;
      const double v = b.band(c)[i] / nb;
      diff += (u - v) * (u - v);
      sum += (u + v) * (u + v);
    }
    total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum)) * 180.0 / std::numbers::pi;
    ++used;
  }
  if (used == 0) throw DegenerateInputError("SAD: every pixel has a zero spectrum");
  if (used < n) warn("SAD: skipped " + std::to_string(n - used) + " pixels with zero spectra");
  return total / static_cast<double>(used);
}

double reflectance_consistency(const Raster& sr, const Raster& lr, int ratio) {
  Raster down = boxcar_downsample(sr, ratio);
  if (!down.same_shape(lr)) throw DimensionError("reflectance consistency: sr is not ratio x lr");
  double s = 0.0;
  for (std::size_t i = 0; i < lr.size(); ++i) s += std::abs(down.data()[i] - lr.data()[i]);
  return s / static_cast<double>(lr.size());
}

Shift phase_correlation_shift(const Raster& a, const Raster& b) {
  require_same(a, b, "phase correlation");
  if (a.bands() != 1) throw DimensionError("phase correlation expects single-band rasters");
  const int h = a.height(), w = a.width();
  auto is_constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  };
  if (is_constant(a.band(0)) || is_constant(b.band(0)))
    throw DegenerateInputError("phase correlation of a constant image");

  const int wc = w / 2 + 1;
  const std::size_t nspec = static_cast<std::size_t>(h) * wc;
  std::vector<double> real(static_cast<std::size_t>(h) * w);
  std::vector<std::complex<double>> fa(nspec), fb(nspec);
  auto forward = [&](std::span<const double> src, std::vector<std::complex<double>>& dst) {
    std::copy(src.begin(), src.end(), real.begin());
    fftw_plan plan = fftw_plan_dft_r2c_2d(h, w, real.data(), reinterpret_cast<fftw_complex*>(dst.data()),
                                          FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  };
  forward(a.band(0), fa);
  forward(b.band(0), fb);
  std::vector<std::complex<double>> cross(nspec);
  for (std::size_t i = 0; i < nspec; ++i) {
    const std::complex<double> r = std::conj(fa[i]) * fb[i];
    const double mag = std::abs(r);
    cross[i] = mag > 1e-12 ? r / mag : std::complex<double>(0.0, 0.0);
  }
  fftw_plan inv = fftw_plan_dft_c2r_2d(h, w, reinterpret_cast<fftw_complex*>(cross.data()), real.data(),
                                       FFTW_ESTIMATE);
  fftw_execute(inv);
  fftw_destroy_plan(inv);

  const auto peak = std::max_element(real.begin(), real.end());
  const int idx = static_cast<int>(peak - real.begin());
  Shift s{idx / w, idx % w};
  if (s.dy >= (h + 1) / 2) s.dy -= h;
  if (s.dx >= (w + 1) / 2) s.dx -= w;
  return s;
}

MetricsReport evaluate(const Raster& ref, const Raster& pred, double ratio, double peak, const Raster* lr) {
  require_same(ref, pred, "evaluate");
  MetricsReport rep;
  for (int c = 0; c < ref.bands(); ++c) {
    BandMetrics m;
    m.name = ref.meta(c).name;
    m.mse = mse_band(ref, pred, c);
    m.psnr = psnr_band(ref, pred, c, peak);
    m.ssim = ssim_band(ref, pred, c, peak);
    m.r2 = r2_band(ref, pred, c);
    m.ncc = ncc_band(ref, pred, c);
    rep.per_band.push_back(m);
  }
  rep.ergas = ergas(ref, pred, ratio);
  rep.sad_mean = sad(ref, pred);
  if (lr != nullptr) rep.reflectance_l1 = reflectance_consistency(pred, *lr, static_cast<int>(std::lround(ratio)));
  auto band_mean = [](const Raster& r) {
    Raster m(1, r.height(), r.width(), 0.0);
    for (int c = 0; c < r.bands(); ++c)
      for (std::size_t i = 0; i < r.plane_size(); ++i) m.data()[i] += r.band(c)[i] / r.bands();
    return m;
  };
  try {
    rep.spatial_shift = phase_correlation_shift(band_mean(ref), band_mean(pred));
  } catch (const DegenerateInputError&) {
    warn("spatial shift undefined for constant images; reporting (0, 0)");
  }
  return rep;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

std::string MetricsReport::table() const {
  std::ostringstream s;
  s << std::left << std::setw(10) << "band" << std::right << std::setw(14) << "mse" << std::setw(12) << "psnr"
    << std::setw(10) << "ssim" << std::setw(10) << "r2" << std::setw(10) << "ncc" << '\n';
  for (const BandMetrics& m : per_band) {
    s << std::left << std::setw(10) << m.name << std::right << std::fixed << std::setprecision(4) << std::setw(14)
      << m.mse << std::setw(12);
    if (std::isinf(m.psnr))
      s << "inf";
    else
      s << m.psnr;
    s << std::setw(10) << m.ssim << std::setw(10) << m.r2 << std::setw(10) << m.ncc << '\n';
  }
  s << "ERGAS " << ergas << "\nSAD(deg) " << sad_mean << '\n';
  if (reflectance_l1) s << "reflectance L1 " << *reflectance_l1 << '\n';
  s << "shift " << spatial_shift.dy << ' ' << spatial_shift.dx << '\n';
  return s.str();
}

std::string MetricsReport::key_values() const {
  std::ostringstream s;
  for (const BandMetrics& m : per_band) {
    s << "band." << m.name << ".mse=" << fmt(m.mse) << '\n';
    s << "band." << m.name << ".psnr=" << fmt(m.psnr) << '\n';
    s << "band." << m.name << ".ssim=" << fmt(m.ssim) << '\n';
    s << "band." << m.name << ".r2=" << fmt(m.r2) << '\n';
    s << "band." << m.name << ".ncc=" << fmt(m.ncc) << '\n';
  }
  s << "ergas=" << fmt(ergas) << '\n';
  s << "sad_mean=" << fmt(sad_mean) << '\n';
  if (reflectance_l1) s << "reflectance_l1=" << fmt(*reflectance_l1) << '\n';
  s << "shift_dy=" << spatial_shift.dy << "\nshift_dx=" << spatial_shift.dx << '\n';
  return s.str();
}

std::vector<double> average_rank(const std::vector<std::vector<double>>& scores,
                                 const std::vector<bool>& higher_better) {
  const std::size_t methods = scores.size();
  if (methods == 0) return {};
  const std::size_t k = higher_better.size();
  for (const auto& row : scores)
    if (row.size() != k) throw DimensionError("average_rank: every method needs one score per metric");
  std::vector<double> total(methods, 0.0);
  for (std::size_t m = 0; m < k; ++m) {
    std::vector<std::size_t> order(methods);
    for (std::size_t i = 0; i < methods; ++i) order[i] = i;
    auto better = [&](std::size_t a, std::size_t b) {
      return higher_better[m] ? scores[a][m] > scores[b][m] : scores[a][m] < scores[b][m];
    };
    std::stable_sort(order.begin(), order.end(), better);
    for (std::size_t i = 0; i < methods;) {
      std::size_t j = i;
      while (j + 1 < methods && scores[order[j + 1]][m] == scores[order[i]][m]) ++j;
      // Ranks are 1-based; a tie group shares the mean of its positions.
      const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t t = i; t <= j; ++t) total[order[t]] += shared;
      i = j + 1;
    }
  }
  for (double& t : total) t /= static_cast<double>(k);
  return total;
}

}  // namespace s2fuse
