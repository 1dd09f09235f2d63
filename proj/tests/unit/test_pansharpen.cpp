#include <doctest.h>

#include <Eigen/Dense>

#include "../oracles.hpp"
#include "common.hpp"
#include "s2fuse/degradation.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/fusion.hpp"
#include "s2fuse/pansharpen.hpp"
#include "s2fuse/resample.hpp"
#include "s2fuse/scene.hpp"

using namespace s2fuse;
using testutil::max_abs_diff;

namespace {

Raster smooth_scene(std::uint64_t seed, int size, int bands) {
  SceneSpec s;
  s.height = s.width = size;
  s.bands = bands;
  s.seed = seed;
  return gen_scene(s);
}

Raster band_mean(const Raster& r) {
  Raster m(1, r.height(), r.width());
  for (int c = 0; c < r.bands(); ++c)
    for (std::size_t i = 0; i < r.plane_size(); ++i) m.data()[i] += r.band(c)[i] / r.bands();
  return m;
}

}  // namespace

TEST_SUITE("pansharpen") {
  TEST_CASE("method names") {
    CHECK(parse_pan_method("pca") == PanMethod::PCA);
    CHECK(to_string(PanMethod::GLP) == "glp");
    CHECK_THROWS_AS(parse_pan_method("brovey"), ParameterError);
  }

  TEST_CASE("population statistics") {
    const double a[] = {1, 2, 3, 4}, b[] = {2, 4, 6, 8};
    CHECK(population_mean(a) == 2.5);
    CHECK(population_cov(a, a) == 1.25);
    CHECK(population_cov(a, b) == 2.5);
    auto m = match_mean_std(a, b);
    CHECK(oracle::moments(m).first == doctest::Approx(5.0));
    CHECK(oracle::moments(m).second == doctest::Approx(5.0));
  }

  TEST_CASE("GS: pan equal to intensity injects nothing") {
    Raster ms = smooth_scene(60, 8, 3);
    Raster up = resample_bicubic(ms, Scale::up(4));
    Raster out = gs_pansharpen(ms, band_mean(up), 4);
    CHECK(max_abs_diff(out, up) < 1e-9);
  }

  TEST_CASE("GS: single band equal to the downsampled pan") {
    Raster pan = smooth_scene(61, 32, 1);
    Raster ms = boxcar_downsample(pan, 4);
    InjectionGains g;
    Raster out = gs_pansharpen(ms, pan, 4, &g);
    CHECK(g.g[0] == doctest::Approx(1.0).epsilon(1e-12));
    // With unit gain the output is the pan matched to the upsampled band:
    // an affine copy of the pan, off only by the resampling loss of contrast.
    Raster up = resample_bicubic(ms, Scale::up(4));
    auto matched = match_mean_std(pan.band(0), up.band(0));
    for (std::size_t i = 0; i < matched.size(); ++i) CHECK(out.data()[i] == doctest::Approx(matched[i]).epsilon(1e-9));
    double e_out = 0.0, e_up = 0.0;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      e_out += std::pow(out.data()[i] - pan.data()[i], 2);
      e_up += std::pow(up.data()[i] - pan.data()[i], 2);
    }
    CHECK(e_out < e_up);
  }

  TEST_CASE("GS: constant MS gives zero gains and a constant output") {
    SeededRng rng(62);
    Raster ms(2, 4, 4, 40.0);
    InjectionGains g;
    Raster out = gs_pansharpen(ms, oracle::random_raster(rng, 1, 16, 16), 4, &g);
    CHECK(g.g == std::vector<double>{0.0, 0.0});
    for (double v : out.data()) CHECK(v == doctest::Approx(40.0).epsilon(1e-12));
  }

  TEST_CASE("IHS: identity and hand-computed two-band case") {
    Raster ms = smooth_scene(63, 8, 3);
    Raster up = resample_bicubic(ms, Scale::up(2));
    CHECK(max_abs_diff(ihs_pansharpen(ms, band_mean(up), 2), up) < 1e-10);

    Raster two(2, 1, 2, std::vector<double>{1, 3, 5, 7});
    Raster pan(1, 1, 2, std::vector<double>{10, 0});
    // I = (3, 5); pan matched to mean 4, std 1 gives (5, 3); delta (2, -2).
    Raster out = ihs_pansharpen(two, pan, 1);
    const double want[] = {3, 1, 7, 5};
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  TEST_CASE("PCA: PC1 substitution is the identity and axes are orthonormal eigenvectors") {
    Raster ms = smooth_scene(64, 8, 3);
    Raster up = resample_bicubic(ms, Scale::up(2));
    std::vector<double> lambda;
    auto axes = principal_axes(up, &lambda);
    Raster pc1(1, up.height(), up.width());
    for (std::size_t i = 0; i < up.plane_size(); ++i)
      for (int c = 0; c < 3; ++c) pc1.data()[i] += axes[0][c] * up.band(c)[i];
    CHECK(max_abs_diff(pca_pansharpen(ms, pc1, 2), up) < 1e-6);

    Eigen::Matrix3d cov;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cov(i, j) = population_cov(up.band(i), up.band(j));
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d v(axes[k][0], axes[k][1], axes[k][2]);
      CHECK((cov * v - lambda[k] * v).norm() < 1e-8 * lambda[0]);
      for (int m = 0; m < 3; ++m) CHECK(std::abs(v.dot(Eigen::Vector3d(axes[m][0], axes[m][1], axes[m][2])) - (k == m)) < 1e-12);
    }
    CHECK(lambda[0] >= lambda[1]);
    CHECK(lambda[1] >= lambda[2]);
  }

  TEST_CASE("PCA: rank-deficient covariance and band count") {
    SeededRng rng(65);
    Raster one = oracle::random_raster(rng, 1, 4, 4);
    Raster dup = Raster::stack(std::vector<Raster>{one, one});
    CHECK_THROWS_AS(pca_pansharpen(dup, oracle::random_raster(rng, 1, 8, 8), 2), DegenerateInputError);
    CHECK_THROWS_AS(pca_pansharpen(one, oracle::random_raster(rng, 1, 8, 8), 2), DimensionError);
  }

  TEST_CASE("GLP: constant pan and gain recovery") {
    Raster ms = smooth_scene(66, 8, 2);
    Raster up = resample_bicubic(ms, Scale::up(4));
    const double q[] = {0.3};
    CHECK(max_abs_diff(mtf_glp_pansharpen(ms, Raster(1, 32, 32, 100.0), 4, q), up) < 1e-9);

    // ms = a * sensor_downsample(pan) + c.
    Raster pan = smooth_scene(67, 64, 1);
    Raster low = boxcar_downsample(conv2d_reflect(pan, gaussian_kernel(mtf_sigma(0.3, 4))), 4);
    Raster lin(2, 16, 16);
    const double a[] = {0.7, 1.8}, c[] = {12.0, -30.0};
    for (int b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < lin.plane_size(); ++i) lin.band(b)[i] = a[b] * low.data()[i] + c[b];
    InjectionGains g;
    mtf_glp_pansharpen(lin, pan, 4, q, false, &g);
    for (int b = 0; b < 2; ++b) CHECK(g.g[b] == doctest::Approx(a[b]).epsilon(0.05));
  }

  TEST_CASE("shape checks") {
    Raster ms(2, 4, 4, 1.0);
    CHECK_THROWS_AS(gs_pansharpen(ms, Raster(1, 15, 16), 4), DimensionError);
    CHECK_THROWS_AS(gs_pansharpen(ms, Raster(2, 16, 16), 4), DimensionError);
    const double q[] = {0.3, 0.3, 0.3};
    CHECK_THROWS_AS(mtf_glp_pansharpen(ms, Raster(1, 16, 16), 4, q), DimensionError);
  }
}
