#include <doctest.h>

#include <fstream>
#include <numbers>

#include "../oracles.hpp"
#include "common.hpp"
#include "s2fuse/degradation.hpp"
#include "s2fuse/errors.hpp"

using namespace s2fuse;
using testutil::max_abs_diff;

TEST_SUITE("degradation") {
  TEST_CASE("harmonize: identity exponent, fixed points, formula") {
    SeededRng rng(10);
    Raster a = oracle::random_raster(rng, 3, 4, 4);
    CHECK(max_abs_diff(harmonize(a, {1.0, 1.0, 1.0}), a) < 1e-12);
    Raster px(1, 1, 3, std::vector<double>{0.0, 63.75, 255.0});
    Raster h = harmonize(px, {2.0});
    CHECK(h.at(0, 0, 0) == 0.0);
    CHECK(h.at(0, 0, 1) == doctest::Approx(127.5).epsilon(1e-12));
    CHECK(h.at(0, 0, 2) == doctest::Approx(255.0).epsilon(1e-12));
    CHECK_THROWS_AS(harmonize(px, {0.0}), ParameterError);
    CHECK_THROWS_AS(harmonize(px, {1.0, 1.0}), DimensionError);
    Raster bad(1, 1, 1, 300.0);
    CHECK_THROWS_AS(harmonize(bad, {1.0}), DomainError);
  }

  TEST_CASE("gaussian kernels: normalization, symmetry, density oracle") {
    Kernel2D iso = gaussian_kernel(BlurSpec::isotropic(2.0, 21));
    double tot = 0.0;
    for (int y = 0; y < 21; ++y)
      for (int x = 0; x < 21; ++x) tot += std::exp(-((y - 10.0) * (y - 10.0) + (x - 10.0) * (x - 10.0)) / 8.0);
    CHECK(iso.at(10, 10) == doctest::Approx(1.0 / tot).epsilon(1e-12));
    CHECK(iso.sum() == doctest::Approx(1.0).epsilon(1e-12));

    Kernel2D an = gaussian_kernel(BlurSpec::anisotropic(2.25, 2.25, 0.7, 21));
    Kernel2D is = gaussian_kernel(BlurSpec::isotropic(1.5, 21));
    for (std::size_t i = 0; i < an.weights.size(); ++i) CHECK(std::abs(an.weights[i] - is.weights[i]) < 1e-12);

    SeededRng rng(11);
    for (double theta : {0.0, std::numbers::pi / 2}) {
      Kernel2D k = gaussian_kernel(BlurSpec::anisotropic(rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), theta, 21));
      CHECK(k.sum() == doctest::Approx(1.0).epsilon(1e-12));
      for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 21; ++x) {
          CHECK(k.at(y, x) >= 0.0);
          CHECK(std::abs(k.at(y, x) - k.at(20 - y, 20 - x)) < 1e-15);
          CHECK(std::abs(k.at(y, x) - k.at(20 - y, x)) < 1e-15);
        }
    }
    CHECK_THROWS_AS(gaussian_kernel(BlurSpec::isotropic(2.0, 20)), ParameterError);
    CHECK_THROWS_AS(gaussian_kernel(BlurSpec::isotropic(-1.0, 21)), ParameterError);
  }

  TEST_CASE("blur sampling regimes") {
    SeededRng rng(12);
    BlurSpec f = sample_blur(rng, BlurMode::fixed(3.0));
    CHECK(f.kind == BlurKind::Isotropic);
    CHECK(f.sigma == 3.0);
    SeededRng a(13), b(13);
    BlurSpec sa = sample_blur(a, BlurMode::train()), sb = sample_blur(b, BlurMode::train());
    CHECK(sa.lambda1 == sb.lambda1);
    CHECK(sa.theta == sb.theta);
    double lmin = 10, lmax = 0, tmin = 10, tmax = -1;
    for (int i = 0; i < 10000; ++i) {
      BlurSpec s = sample_blur(rng, BlurMode::train());
      CHECK(s.kind == BlurKind::Anisotropic);
      lmin = std::min({lmin, s.lambda1, s.lambda2});
      lmax = std::max({lmax, s.lambda1, s.lambda2});
      tmin = std::min(tmin, s.theta);
      tmax = std::max(tmax, s.theta);
    }
    CHECK(lmin >= kLambdaMin);
    CHECK(lmax <= kLambdaMax);
    CHECK(tmin >= 0.0);
    CHECK(tmax <= std::numbers::pi);
    for (int i = 0; i < 1000; ++i) {
      BlurSpec s = sample_blur(rng, BlurMode::validation());
      CHECK(s.kind == BlurKind::Isotropic);
      CHECK(s.sigma >= kIsoSigmaMin);
      CHECK(s.sigma <= kIsoSigmaMax);
    }
    CHECK(BlurMode::parse("fixed:2.5").sigma == 2.5);
    CHECK_THROWS_AS(BlurMode::parse("gaussian"), ParameterError);
  }

  TEST_CASE("degrade: identity, noise level, constants") {
    SeededRng rng(14);
    Raster a = oracle::random_raster(rng, 2, 8, 8);
    DegradationSpec id;
    id.harmonize = false;
    CHECK(max_abs_diff(degrade(a, id, rng), a) == 0.0);

    Raster c(1, 100, 100, 128.0);
    DegradationSpec noisy;
    noisy.harmonize = false;
    noisy.noise_sigma = 25.0;
    Raster n = degrade(c, noisy, rng);
    std::vector<double> d;
    for (std::size_t i = 0; i < n.size(); ++i) d.push_back(n.data()[i] - 128.0);
    CHECK(std::sqrt(oracle::moments(d).second) == doctest::Approx(25.0).epsilon(0.03));

    DegradationSpec bs;
    bs.harmonize = false;
    bs.blur = BlurSpec::isotropic(3.0);
    bs.scale = 4;
    Raster cc(1, 32, 32, 90.0);
    CHECK(max_abs_diff(degrade(cc, bs, rng), Raster(1, 8, 8, 90.0)) < 1e-9);
  }

  TEST_CASE("degrade is deterministic under a seed") {
    SeededRng g(15);
    Raster a = oracle::random_raster(g, 3, 16, 16);
    DegradationSpec s;
    s.blur = BlurSpec::anisotropic(1.0, 3.0, 0.4);
    s.scale = 2;
    s.noise_sigma = 5.0;
    s.gammas = std::vector<double>{1.1, 0.9, 1.0};
    SeededRng r1(99), r2(99);
    CHECK(max_abs_diff(degrade(a, s, r1), degrade(a, s, r2)) == 0.0);
  }

  TEST_CASE("wald pair") {
    Raster r(1, 2, 2, std::vector<double>{1, 2, 3, 4});
    WaldPair p = wald_pair(r, 2);
    CHECK(p.input.at(0, 0, 0) == 2.5);
    CHECK(&p.target.get() == &r);

    Raster ms(1, 16, 16, 50.0);
    ms.meta(0).gsd = 10.0;
    WaldPair q = wald_pair(ms, 4, std::vector<double>{2.0});
    CHECK(q.input.meta(0).gsd == 40.0);
    CHECK(q.target.get().meta(0).gsd == 10.0);
    CHECK(max_abs_diff(q.input, Raster(1, 4, 4, 50.0)) < 1e-12);
  }

  TEST_CASE("gamma file") {
    const auto p = testutil::scratch("gammas.txt");
    std::ofstream(p) << "# calibration\n1.1\n\n0.9\n";
    auto g = read_gamma_file(p);
    REQUIRE(g.size() == 2);
    CHECK(g[1] == 0.9);
    std::ofstream(p) << "1.0\nabc\n";
    CHECK_THROWS_AS(read_gamma_file(p), IoError);
  }
}
