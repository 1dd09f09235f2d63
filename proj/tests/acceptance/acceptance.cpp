// Acceptance suite: one PASS/FAIL line per criterion.
//
//   s2fuse_acceptance --cli <path to s2fuse> [--only 1,5,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "../oracles.hpp"
#include "s2fuse/degradation.hpp"
#include "s2fuse/diffusion.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/fusion.hpp"
#include "s2fuse/metrics.hpp"
#include "s2fuse/nn/graph.hpp"
#include "s2fuse/nn/layers.hpp"
#include "s2fuse/nn/optim.hpp"
#include "s2fuse/pansharpen.hpp"
#include "s2fuse/raster_io.hpp"
#include "s2fuse/resample.hpp"
#include "s2fuse/scene.hpp"

using namespace s2fuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 --------------------------------------------------------------------

Outcome gradient_integrity() {
  using namespace nn;
  const auto t0 = std::chrono::steady_clock::now();
  SeededRng rng(101);
  auto filled = [&](const std::string& name, Shape s, double lo = -1.0, double hi = 1.0) {
    ParamTensor p(name, s);
    for (double& v : p.value) v = rng.uniform(lo, hi);
    return p;
  };
  struct Case {
    std::string name;
    double err = 0.0;
  };
  std::vector<Case> cases;
  auto check = [&](const std::string& name, const std::function<Var(Graph&)>& f, const ParamList& wrt) {
    SeededRng prng(rng.next_u64());
    cases.push_back({name, gradcheck(f, wrt, prng).max_rel_error});
  };

  {
    ParamTensor x = filled("x", {2, 3, 6, 5});
    Conv2d conv("c3", 3, 4, 3);
    conv.init(rng);
    for (double& b : conv.bias.value) b = rng.uniform(-0.5, 0.5);
    ParamList wrt{&x};
    conv.collect(wrt);
    check("conv3x3", [&](Graph& g) { return conv(g, g.param(x)); }, wrt);
  }
  {
    ParamTensor x = filled("x", {2, 5, 4, 4});
    Conv2d conv("c1", 5, 3, 1);
    conv.init(rng);
    for (double& b : conv.bias.value) b = rng.uniform(-0.5, 0.5);
    ParamList wrt{&x};
    conv.collect(wrt);
    check("conv1x1", [&](Graph& g) { return conv(g, g.param(x)); }, wrt);
  }
  {
    ParamTensor x = filled("x", {2, 3, 5, 5});
    check("leaky_relu", [&](Graph& g) { return leaky_relu(g.param(x), 0.2); }, {&x});
  }
  {
    ParamTensor x = filled("x", {2, 4, 3, 3}, -2.0, 2.0);
    check("softmax", [&](Graph& g) { return softmax(g.param(x)); }, {&x});
  }
  {
    ParamTensor x = filled("x", {3, 6, 1, 1});
    Dense d("d", 6, 4);
    d.init(rng);
    for (double& b : d.bias.value) b = rng.uniform(-0.5, 0.5);
    ParamList wrt{&x};
    d.collect(wrt);
    check("dense", [&](Graph& g) { return d(g, g.param(x)); }, wrt);
  }
  {
    ParamTensor x = filled("x", {1, 4, 5, 5});
    Rrdb block("rrdb", 4, 2);
    block.init(rng);
    ParamList wrt{&x};
    block.collect(wrt);
    // Larger hidden weights so the block is far from identity.
    for (ParamTensor* p : wrt)
      if (p != &x)
        for (double& v : p->value) v = rng.uniform(-0.5, 0.5);
    check("rrdb", [&](Graph& g) { return block(g, g.param(x)); }, wrt);
  }
  {
    ParamTensor x = filled("x", {2, 3, 4, 4});
    ParamTensor v = filled("v", {2, 5, 1, 1});
    DaConv da("da", 3, 4, 5);
    da.init(rng);
    ParamList wrt{&x, &v};
    da.collect(wrt);
    for (ParamTensor* p : wrt)
      if (p != &x && p != &v)
        for (double& w : p->value) w = rng.uniform(-0.5, 0.5);
    check("daconv", [&](Graph& g) { return da(g, g.param(x), g.param(v)); }, wrt);
  }
  {
    ParamTensor q = filled("q", {1, 8, 1, 1});
    ParamTensor pos = filled("pos", {1, 8, 1, 1});
    ParamTensor neg = filled("neg", {3, 8, 1, 1});
    check("infonce", [&](Graph& g) { return infonce(g.param(q), g.param(pos), g.param(neg), 0.5); },
          {&q, &pos, &neg});
  }
  {
    ParamTensor a = filled("a", {2, 3, 4, 4});
    ParamTensor b = filled("b", {2, 3, 4, 4});
    check("l1", [&](Graph& g) { return l1_loss(g.param(a), g.param(b)); }, {&a, &b});
  }
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 60.0;
  std::string worst;
  double worst_err = 0.0;
  for (const Case& c : cases) {
    if (!(c.err < 1e-4)) ok = false;
    if (c.err >= worst_err) {
      worst_err = c.err;
      worst = c.name;
    }
  }
  return {ok, std::to_string(cases.size()) + " layers, worst " + worst + " rel " + num(worst_err, 3) + " (< 1e-4), " +
                  num(elapsed, 3) + " s (< 60 s)"};
}

// ---- 2 --------------------------------------------------------------------

Outcome diffusion_marginals() {
  const NoiseSchedule sched = cosine_schedule(64);
  SeededRng rng(202);
  const int h = 100, w = 100;
  const double n = h * w;
  Raster x0 = oracle::random_raster(rng, 1, h, w, -1.0, 1.0);
  bool ok = true;
  double worst = 0.0;  // worst deviation in units of the 3-sigma bound
  for (int t : {1, 4, 16, 32, 48, 64}) {
    Raster x = x0;
    for (int s = 1; s <= t; ++s) x = forward_step(x, s, sched, rng);
    const double ab = sched.alpha_bar(t);
    std::vector<double> resid(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) resid[i] = x.data()[i] - std::sqrt(ab) * x0.data()[i];
    const auto [m, v] = oracle::moments(resid);
    const double var = 1.0 - ab;
    const double mean_bound = 3.0 * std::sqrt(var / n);
    const double var_bound = 3.0 * var * std::sqrt(2.0 / (n - 1.0));
    worst = std::max({worst, std::abs(m) / mean_bound, std::abs(v - var) / var_bound});
    if (std::abs(m) > mean_bound || std::abs(v - var) > var_bound) ok = false;
  }
  const Denoiser oracle_denoiser = [&](const Raster&, int, const Raster&, std::span<const double>) { return x0; };
  Raster rec = sample(oracle_denoiser, Raster(), {}, sched, rng, 1, h, w);
  double l1 = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) l1 += std::abs(rec.data()[i] - x0.data()[i]);
  l1 /= n;
  const double bound = std::sqrt(1.0 - sched.alpha_bar(1)) * 1.5;
  if (!(l1 < bound)) ok = false;
  return {ok, "worst moment deviation " + num(worst, 3) + " of 3-sigma bound; reverse-chain l1 " + num(l1, 3) +
                  " (< " + num(bound, 3) + ")"};
}

// ---- 3 --------------------------------------------------------------------

Outcome fold_roundtrip() {
  SeededRng rng(303);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const int r = (i % 2 == 0) ? 2 : 4;
    const int bands = 1 + static_cast<int>(rng.below(4));
    const int h = r * (1 + static_cast<int>(rng.below(8)));
    const int w = r * (1 + static_cast<int>(rng.below(8)));
    Raster img = oracle::random_raster(rng, bands, h, w, -1e3, 1e3);
    Raster back = pixel_unfold(pixel_fold(img, r), r);
    nn::Graph g;
    Raster back_g = nn::to_raster(nn::pixel_unfold(nn::pixel_fold(nn::raster_input(g, img), r), r));
    if (back.same_shape(img) && back_g.same_shape(img) &&
        std::memcmp(back.data().data(), img.data().data(), img.size() * sizeof(double)) == 0 &&
        std::memcmp(back_g.data().data(), img.data().data(), img.size() * sizeof(double)) == 0)
      ++exact;
  }
  return {exact == 100, std::to_string(exact) + "/100 bit-exact round trips (raster and graph ops)"};
}

// ---- shared scene helpers ---------------------------------------------------

std::pair<Raster, Raster> ms_and_guide(std::uint64_t seed, int size, int ms_bands, double texture = 2.0,
                                       bool smooth = false) {
  SceneSpec spec;
  spec.height = spec.width = size;
  spec.bands = 3 + ms_bands;
  spec.seed = seed;
  spec.texture_sigma = texture;
  if (smooth) {
    // Only the gradient and blob latents; no sharp edges or texture.
    spec.mixing = scene_mixing(spec);
    for (int b = 0; b < spec.bands; ++b) {
      spec.mixing[static_cast<std::size_t>(b * kSceneLatents + 2)] = 0.0;
      spec.mixing[static_cast<std::size_t>(b * kSceneLatents + 3)] = 0.0;
    }
  }
  Raster scene = gen_scene(spec);
  std::vector<int> ms_idx;
  for (int b = 0; b < ms_bands; ++b) ms_idx.push_back(3 + b);
  const std::vector<int> rgb{0, 1, 2};
  return {scene.select_bands(ms_idx), scene.select_bands(rgb)};
}

// ---- 4 --------------------------------------------------------------------

Outcome identity_equivalence() {
  SeededRng rng(404);
  int exact = 0;
  for (int i = 0; i < 20; ++i) {
    const int ratio = (i % 3 == 0) ? 8 : 4;
    const int bands = 2 + static_cast<int>(rng.below(4));
    auto [ms, guide] = ms_and_guide(4000 + static_cast<std::uint64_t>(i), 64, bands);
    std::vector<double> gnyq;
    for (int b = 0; b < bands; ++b) gnyq.push_back(rng.uniform(0.2, 0.45));
    for (int b = 0; b < bands; ++b) ms.meta(b).gnyq = gnyq[static_cast<std::size_t>(b)];
    FusionSample s = make_wald_sample(ms, guide, ratio);
    FusionConfig fc;
    fc.bands = bands;
    fc.ratio = ratio;
    FusionParams params(fc, gnyq);
    params.init(rng);
    for (double& l : params.mixer_logits.value) l = rng.uniform(-1.0, 1.0);
    Raster nn_out = fuse(s.ms_lr, s.guide, params);
    Raster pan = mix_pan(s.guide, params.mixer_logits.value);
    Raster glp = mtf_glp_pansharpen(s.ms_lr, pan, ratio, gnyq, true);
    if (nn_out.same_shape(glp) &&
        std::memcmp(nn_out.data().data(), glp.data().data(), glp.size() * sizeof(double)) == 0)
      ++exact;
  }
  return {exact == 20, std::to_string(exact) + "/20 scenes bit-identical to unit-gain MTF-GLP"};
}

// ---- 5 --------------------------------------------------------------------

Outcome fusion_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const int ratio = 4;
  std::vector<FusionSample> train, val, test;
  for (int i = 0; i < 64; ++i) {
    auto [ms, guide] = ms_and_guide(5000 + static_cast<std::uint64_t>(i), 64, 4);
    FusionSample s = make_wald_sample(ms, guide, ratio);
    if (i < 40)
      train.push_back(std::move(s));
    else if (i < 48)
      val.push_back(std::move(s));
    else
      test.push_back(std::move(s));
  }
  FusionConfig fc;
  fc.bands = 4;
  fc.ratio = ratio;
  const std::vector<double> gnyq{0.3};
  FusionParams params(fc, gnyq);
  SeededRng init_rng(505);
  params.init(init_rng);
  FusionTrainConfig cfg;
  cfg.steps = 2000;
  cfg.tile = 32;
  cfg.lr = 5e-4;
  cfg.eval_every = 200;
  cfg.seed = 506;
  FusionTrainResult res = train_fusion(train, val, params, cfg);

  double e_nn = 0.0, e_bic = 0.0, e_glp = 0.0;
  const std::vector<double> equal(3, 0.0);
  for (const FusionSample& s : test) {
    e_nn += ergas(*s.target, fuse(s.ms_lr, s.guide, params), ratio);
    e_bic += ergas(*s.target, resample_bicubic(s.ms_lr, Scale::up(ratio)), ratio);
    e_glp += ergas(*s.target, mtf_glp_pansharpen(s.ms_lr, mix_pan(s.guide, equal), ratio, gnyq), ratio);
  }
  e_nn /= test.size();
  e_bic /= test.size();
  e_glp /= test.size();
  const double elapsed = seconds_since(t0);
  const double vs_bic = 1.0 - e_nn / e_bic;
  const double vs_glp = 1.0 - e_nn / e_glp;
  const bool ok = vs_bic >= 0.25 && vs_glp >= 0.10 && elapsed < 900.0;
  return {ok, "held-out ERGAS nn " + num(e_nn) + ", bicubic " + num(e_bic) + " (-" + num(100 * vs_bic, 3) +
                  "%, need 25%), GLP " + num(e_glp) + " (-" + num(100 * vs_glp, 3) + "%, need 10%), best step " +
                  std::to_string(res.best_step) + ", " + num(elapsed, 4) + " s (< 900 s)"};
}

// ---- 6 --------------------------------------------------------------------

Outcome wald_consistency() {
  SeededRng rng(606);
  double worst = 0.0;       // relative to the declared band dynamic range
  double worst_data = 0.0;  // relative to the observed LR band span, for reference
  for (int ratio : {4, 8, 24}) {
    for (int i = 0; i < 3; ++i) {
      auto [ms, guide] = ms_and_guide(6000 + 10 * static_cast<std::uint64_t>(ratio) + static_cast<std::uint64_t>(i),
                                      192, 4, 0.0, true);
      FusionSample s = make_wald_sample(ms, guide, ratio);
      FusionConfig fc;
      fc.bands = 4;
      fc.ratio = ratio;
      FusionParams params(fc, std::vector<double>{0.3});
      params.init(rng);
      Raster out = fuse(s.ms_lr, s.guide, params);
      Raster down = oracle::block_mean(out, ratio);
      for (int c = 0; c < out.bands(); ++c) {
        auto lr = s.ms_lr.band(c);
        const auto [lo, hi] = std::minmax_element(lr.begin(), lr.end());
        double l1 = 0.0;
        for (std::size_t k = 0; k < lr.size(); ++k) l1 += std::abs(down.band(c)[k] - lr[k]);
        l1 /= lr.size();
        worst = std::max(worst, l1 / s.ms_lr.meta(c).dynamic_range());
        worst_data = std::max(worst_data, l1 / std::max(*hi - *lo, 1e-9));
      }
    }
  }
  return {worst <= 0.02, "worst mean |down(fused) - ms_lr| = " + num(100 * worst, 3) +
                             "% of band dynamic range (<= 2%) over ratios 4, 8, 24; " + num(100 * worst_data, 3) +
                             "% of the observed LR span"};
}

// ---- 7 --------------------------------------------------------------------

Outcome degradation_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  nn::ToyDenoiserConfig mc;
  ToyTrainConfig tc;
  tc.steps = 600;
  tc.patch = 32;
  tc.scenes = 16;
  tc.lr = 1e-3;
  tc.noise_max = 2.0;
  tc.seed = 707;

  ToyDiffusionModel blind(mc), fixed(mc);
  SeededRng ra(708), rb(708);
  blind.init(ra);
  fixed.init(rb);
  ToyTrainConfig tb = tc;
  tb.blur = BlurMode::train();
  ToyTrainConfig tf = tc;
  tf.blur = BlurMode::fixed(3.0);
  train_consistency_proxy(blind, tb);
  train_consistency_proxy(fixed, tf);

  // Held-out scenes degraded with anisotropic kernels (mismatched for the
  // fixed-sigma model).
  SeededRng test_rng(709);
  double l1_blind = 0.0, l1_fixed = 0.0;
  int count = 0;
  for (int i = 0; i < 12; ++i) {
    SceneSpec spec;
    spec.bands = 3;
    spec.seed = 70900 + static_cast<std::uint64_t>(i);
    Raster hr = gen_scene(spec);
    DegradationSpec deg;
    deg.blur = sample_blur(test_rng, BlurMode::train());
    deg.scale = mc.scale;
    Raster lr = degrade(hr, deg, test_rng);
    Raster a = toy_decoder_estimate(blind, lr);
    Raster b = toy_decoder_estimate(fixed, lr);
    for (std::size_t k = 0; k < hr.size(); ++k) {
      l1_blind += std::abs(a.data()[k] - hr.data()[k]);
      l1_fixed += std::abs(b.data()[k] - hr.data()[k]);
    }
    count += static_cast<int>(hr.size());
  }
  l1_blind /= count;
  l1_fixed /= count;
  const double gain = 1.0 - l1_blind / l1_fixed;
  return {gain >= 0.10, "mismatched-blur l1 blind " + num(l1_blind) + " vs fixed " + num(l1_fixed) + " (-" +
                            num(100 * gain, 3) + "%, need 10%), " + num(seconds_since(t0), 3) + " s"};
}

// ---- 8 --------------------------------------------------------------------

Outcome metric_oracles() {
  SeededRng rng(808);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int bands = 1 + static_cast<int>(rng.below(4));
    const int h = 11 + static_cast<int>(rng.below(14));
    const int w = 11 + static_cast<int>(rng.below(14));
    Raster a = oracle::random_raster(rng, bands, h, w, 5.0, 250.0);
    Raster b = a;
    const double noise = rng.uniform(0.5, 30.0);
    for (double& v : b.data()) v += rng.uniform(-noise, noise);
    const double ratio = 2.0 + static_cast<double>(rng.below(6));
    worst = std::max(worst, oracle::rel_diff(ergas(a, b, ratio), oracle::ergas(a, b, ratio)));
    // A single band has angle 0 by definition; arccos rounding makes relative error meaningless there.
    if (bands > 1) worst = std::max(worst, oracle::rel_diff(sad(a, b), oracle::sad(a, b)));
    for (int c = 0; c < bands; ++c) {
      worst = std::max(worst, oracle::rel_diff(psnr_band(a, b, c, 255.0), oracle::psnr_band(a, b, c, 255.0)));
      worst = std::max(worst, oracle::rel_diff(ssim_band(a, b, c, 255.0), oracle::ssim_band(a, b, c, 255.0)));
      worst = std::max(worst, oracle::rel_diff(r2_band(a, b, c), oracle::r2_band(a, b, c)));
      worst = std::max(worst, oracle::rel_diff(ncc_band(a, b, c), oracle::ncc_band(a, b, c)));
    }
  }
  int recovered = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = 16 + static_cast<int>(rng.below(49));
    const int w = 16 + static_cast<int>(rng.below(49));
    Raster a = oracle::random_raster(rng, 1, h, w);
    const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h))) - h / 2;
    const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w))) - w / 2;
    if (phase_correlation_shift(a, oracle::circular_shift(a, dy, dx)) == Shift{dy, dx}) ++recovered;
  }
  const bool ok = worst <= 1e-9 && recovered == 100;
  return {ok, "worst relative metric deviation " + num(worst, 3) + " (<= 1e-9) on 50 rasters; " +
                  std::to_string(recovered) + "/100 shifts recovered"};
}

// ---- 9 --------------------------------------------------------------------

Outcome classical_sanity() {
  SeededRng rng(909);
  std::vector<std::string> failed;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failed.push_back(what);
  };
  auto max_abs = [](const Raster& a, const Raster& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
  };
  const int r = 4;
  auto [ms, guide] = ms_and_guide(9000, 64, 3);
  Raster ms_lr = boxcar_downsample(ms, r);
  Raster up = resample_bicubic(ms_lr, Scale::up(r));
  Raster pan = mix_pan(guide, std::vector<double>(3, 0.0));

  // IHS: band mean of the output equals the matched pan.
  {
    Raster out = ihs_pansharpen(ms_lr, pan, r);
    std::vector<double> intensity(up.plane_size(), 0.0);
    for (int c = 0; c < up.bands(); ++c)
      for (std::size_t i = 0; i < intensity.size(); ++i) intensity[i] += up.band(c)[i] / up.bands();
    const std::vector<double> matched = match_mean_std(pan.band(0), intensity);
    double dev = 0.0;
    for (std::size_t i = 0; i < intensity.size(); ++i) {
      double m = 0.0;
      for (int c = 0; c < out.bands(); ++c) m += out.band(c)[i] / out.bands();
      dev = std::max(dev, std::abs(m - matched[i]));
    }
    expect(dev <= 1e-10, "ihs band mean (" + num(dev, 3) + ")");
  }
  // GS: pan equal to the synthetic intensity injects nothing.
  {
    Raster intensity(1, up.height(), up.width());
    for (int c = 0; c < up.bands(); ++c)
      for (std::size_t i = 0; i < up.plane_size(); ++i) intensity.data()[i] += up.band(c)[i] / up.bands();
    expect(max_abs(gs_pansharpen(ms_lr, intensity, r), up) <= 1e-9, "gs pan = I");
  }
  // GS: single band equal to the downsampled pan gives g ~ 1 and output ~ pan.
  {
    Raster single = boxcar_downsample(pan, r);
    InjectionGains g;
    Raster out = gs_pansharpen(single, pan, r, &g);
    double l1 = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) l1 += std::abs(out.data()[i] - pan.data()[i]);
    l1 /= out.size();
    expect(std::abs(g.g[0] - 1.0) <= 1e-9 && l1 <= 1.0, "gs single band (l1 " + num(l1, 3) + ")");
  }
  // GS: constant MS stays constant.
  {
    Raster flat(3, 16, 16, 80.0);
    Raster out = gs_pansharpen(flat, pan, r);
    double dev = 0.0;
    for (double v : out.data()) dev = std::max(dev, std::abs(v - 80.0));
    expect(dev <= 1e-9, "gs constant ms");
  }
  // PCA: pan = PC1 reproduces x~, and PC2..k are unchanged.
  {
    std::vector<double> lambda;
    const auto axes = principal_axes(up, &lambda);
    std::vector<double> mean(up.bands());
    for (int c = 0; c < up.bands(); ++c) mean[c] = oracle::mean_band(up, c);
    auto project = [&](const Raster& img, int k) {
      Raster pc(1, img.height(), img.width());
      for (std::size_t i = 0; i < img.plane_size(); ++i)
        for (int c = 0; c < img.bands(); ++c) pc.data()[i] += axes[k][c] * (img.band(c)[i] - mean[c]);
      return pc;
    };
    Raster pc1 = project(up, 0);
    expect(max_abs(pca_pansharpen(ms_lr, pc1, r), up) <= 1e-6, "pca pan = PC1");
    Raster out = pca_pansharpen(ms_lr, pan, r);
    for (int k = 1; k < up.bands(); ++k)
      expect(max_abs(project(out, k), project(up, k)) <= 1e-8, "pca PC" + std::to_string(k + 1) + " unchanged");
    // Orthonormal axes that diagonalize the covariance (eigen oracle).
    double ortho = 0.0, resid = 0.0;
    const int kb = up.bands();
    for (int i = 0; i < kb; ++i)
      for (int j = 0; j < kb; ++j) {
        double d = 0.0;
        for (int c = 0; c < kb; ++c) d += axes[i][c] * axes[j][c];
        ortho = std::max(ortho, std::abs(d - (i == j ? 1.0 : 0.0)));
      }
    for (int i = 0; i < kb; ++i) {
      // ||C v - lambda v|| with C from direct summation.
      for (int a = 0; a < kb; ++a) {
        double cv = 0.0;
        for (int b = 0; b < kb; ++b) {
          double cab = 0.0;
          for (std::size_t p = 0; p < up.plane_size(); ++p)
            cab += (up.band(a)[p] - mean[a]) * (up.band(b)[p] - mean[b]);
          cv += cab / up.plane_size() * axes[i][b];
        }
        resid = std::max(resid, std::abs(cv - lambda[i] * axes[i][a]) / lambda[0]);
      }
    }
    expect(ortho <= 1e-10 && resid <= 1e-10, "pca eigen oracle");
  }
  // GLP: a constant pan injects nothing.
  {
    Raster flat_pan(1, 64, 64, 120.0);
    expect(max_abs(mtf_glp_pansharpen(ms_lr, flat_pan, r, std::vector<double>{0.3}), up) <= 1e-9, "glp constant pan");
  }
  // GLP: ms = a * down(pan) + c recovers g ~ a, with down() the sensor's
  // MTF blur followed by decimation.
  {
    const double a = 0.7, c = 12.0;
    Raster lin = boxcar_downsample(conv2d_reflect(pan, gaussian_kernel(mtf_sigma(0.3, r))), r);
    for (double& v : lin.data()) v = a * v + c;
    InjectionGains g;
    mtf_glp_pansharpen(lin, pan, r, std::vector<double>{0.3}, false, &g);
    expect(std::abs(g.g[0] - a) <= 0.05 * a, "glp gain recovery (" + num(g.g[0]) + ")");
  }
  // MTF kernel transfer at Nyquist.
  double worst_mtf = 0.0;
  for (int ratio : {2, 4, 8, 24})
    for (double q : {0.15, 0.25, 0.3, 0.45}) {
      const Kernel2D k = gaussian_kernel(mtf_sigma(q, ratio));
      const double f = 1.0 / (2.0 * ratio);
      worst_mtf = std::max(worst_mtf, std::abs(oracle::kernel_transfer(k, 0.0, f) - q));
      worst_mtf = std::max(worst_mtf, std::abs(oracle::kernel_transfer(k, f, 0.0) - q));
    }
  expect(worst_mtf <= 0.05, "mtf at nyquist (" + num(worst_mtf, 3) + ")");

  std::string detail = failed.empty() ? "all identity cases hold;" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  detail += " MTF transfer deviation " + num(worst_mtf, 3) + " (<= 0.05)";
  return {failed.empty(), detail};
}

// ---- 10 -------------------------------------------------------------------

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

Outcome cli_determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not found (pass --cli)"};
  const fs::path root = fs::temp_directory_path() / ("s2fuse_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  struct Step {
    std::string name;
    std::string args;  // {D} expands to the run directory, {S} to the shared input directory
  };
  const fs::path shared = root / "inputs";
  fs::create_directories(shared);
  write_file_atomic(shared / "gamma.txt", "1.1\n0.9\n1.2\n1.0\n");
  const std::string cfg_text =
      "pipeline.stages = degrade, sr_guide, fuse, eval\npipeline.out_dir = {D}/pipe\npipeline.seed = 3\n"
      "scene.synthetic = true\nscene.size = 48\nscene.ms_bands = 3\ndegrade.guide_scale = 2\n"
      "degrade.guide_blur = train\ndegrade.guide_noise = 1.0\n";
  const std::vector<Step> steps{
      {"gen-scene", "--seed 11 gen-scene --out {D}/scene.raw --size 48 --bands 7"},
      {"gen-scene-checker", "--seed 11 gen-scene --out {D}/checker.raw --size 32 --bands 1 --content checkerboard"},
      {"degrade", "--seed 12 degrade --in {D}/scene.raw --out {D}/deg.raw --scale 2 --blur train --noise 2"},
      {"harmonize", "harmonize --in {D}/pan4.raw --out {D}/harm.raw --gamma-file {S}/gamma.txt"},
      {"make-wald", "make-wald --ms {D}/ms.raw --guide {D}/rgb.raw --ratio 4 --out-lr {D}/ms_lr.raw "
                    "--out-guide {D}/guide.raw"},
      {"train-fusion", "--seed 13 train-fusion --synthetic 3 --size 32 --bands 4 --steps 3 --tile 16 --eval-every 2 "
                       "--out {D}/fusion.ckpt"},
      {"fuse", "fuse --ms {D}/ms_lr.raw --guide {D}/guide.raw --checkpoint {D}/fusion.ckpt --out {D}/fused.raw"},
      {"pansharpen-gs", "pansharpen --method gs --ms {D}/ms_lr.raw --pan {D}/pan.raw --ratio 4 --out {D}/gs.raw"},
      {"pansharpen-ihs", "pansharpen --method ihs --ms {D}/ms_lr.raw --pan {D}/pan.raw --ratio 4 --out {D}/ihs.raw"},
      {"pansharpen-pca", "pansharpen --method pca --ms {D}/ms_lr.raw --pan {D}/pan.raw --ratio 4 --out {D}/pca.raw"},
      {"pansharpen-glp", "pansharpen --method glp --ms {D}/ms_lr.raw --pan {D}/pan.raw --ratio 4 --out {D}/glp.raw"},
      {"eval", "eval --ref {D}/ms.raw --pred {D}/fused.raw --lr {D}/ms_lr.raw --ratio 4 --out {D}/report.txt"},
      {"diffuse-toy-train", "--seed 14 diffuse-toy train --out {D}/toy.ckpt --steps 2 --T 8 --patch 16 --scenes 2 "
                            "--features 8 --blocks 1"},
      {"diffuse-toy-sample", "--seed 15 diffuse-toy sample --checkpoint {D}/toy.ckpt --lr {D}/rgb_lr.raw "
                             "--out {D}/toy_sr.raw"},
      {"run", "run --config {D}/pipe.cfg"},
  };
  auto expand = [](std::string s, const fs::path& d, const fs::path& sh) {
    for (auto [key, val] : {std::pair<std::string, std::string>{"{D}", d.string()}, {"{S}", sh.string()}}) {
      for (std::size_t p = s.find(key); p != std::string::npos; p = s.find(key, p + val.size()))
        s.replace(p, key.size(), val);
    }
    return s;
  };
  std::vector<std::string> failures;
  std::vector<fs::path> dirs{root / "a", root / "b"};
  for (const fs::path& d : dirs) {
    fs::create_directories(d);
    write_file_atomic(d / "pipe.cfg", expand(cfg_text, d, shared));
    for (const Step& st : steps) {
      // Inputs for later steps are carved from the generated scene.
      if (st.name == "harmonize" || st.name == "make-wald") {
        Raster scene = read_raster(d / "scene.raw");
        const std::vector<int> rgb{0, 1, 2}, msb{3, 4, 5, 6};
        write_raster(d / "rgb.raw", scene.select_bands(rgb));
        write_raster(d / "ms.raw", scene.select_bands(msb));
        write_raster(d / "pan4.raw", scene.select_bands(msb));
        write_raster(d / "pan.raw", mix_pan(scene.select_bands(rgb), std::vector<double>(3, 0.0)));
        write_raster(d / "rgb_lr.raw", boxcar_downsample(scene.select_bands(rgb), 2));
      }
      const std::string cmd = cli + " " + expand(st.args, d, shared) + " > " + (d / (st.name + ".stdout")).string() +
                              " 2> " + (d / (st.name + ".stderr")).string();
      if (std::system(cmd.c_str()) != 0) failures.push_back(st.name + " exited nonzero");
    }
  }
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0])) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dirs[0]);
    const std::string ext = rel.extension().string();
    if (ext == ".stderr" || rel.filename() == "pipe.cfg") continue;
    const fs::path other = dirs[1] / rel;
    std::string a = read_file(entry.path());
    std::string b = fs::exists(other) ? read_file(other) : std::string("\x01missing");
    // Run directories differ by name; normalize embedded paths in text outputs.
    if (ext == ".stdout") {
      for (const fs::path& d : dirs) {
        for (std::string* s : {&a, &b})
          for (std::size_t p = s->find(d.string()); p != std::string::npos; p = s->find(d.string(), p))
            s->replace(p, d.string().size(), "<run>");
      }
    }
    if (a != b) failures.push_back(rel.string() + " differs");
    ++compared;
  }
  if (failures.empty()) fs::remove_all(root);
  std::string detail = std::to_string(steps.size()) + " commands, " + std::to_string(compared) + " output files compared";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty() && compared > static_cast<int>(steps.size()), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::istringstream s(argv[++i]);
      std::string tok;
      while (std::getline(s, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: s2fuse_acceptance --cli <s2fuse> [--only 1,2,...]\n";
      return 1;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"diffusion marginal consistency", diffusion_marginals},
      {"pixel fold/unfold round trip", fold_roundtrip},
      {"identity-initialization equivalence", identity_equivalence},
      {"fusion learning signal", fusion_learning},
      {"Wald consistency", wald_consistency},
      {"degradation ablation direction", degradation_ablation},
      {"metric oracles", metric_oracles},
      {"classical baseline sanity", classical_sanity},
      {"CLI determinism", [&] { return cli_determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
