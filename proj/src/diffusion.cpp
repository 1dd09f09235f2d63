#include "s2fuse/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s2fuse/errors.hpp"
#include "s2fuse/resample.hpp"
#include "s2fuse/scene.hpp"

namespace s2fuse {

namespace {

void check_t(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw ParameterError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
}

}  // namespace

double NoiseSchedule::alpha(int t) const {
  check_t(t, *this);
  return alphas[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T) throw ParameterError("timestep outside [0, T]");
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule cosine_schedule(int T, double s) {
  if (T < 1) throw ParameterError("schedule needs T >= 1");
  if (!(s > 0.0)) throw ParameterError("cosine schedule offset must be positive");
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sched;
  sched.T = T;
  sched.alphas.assign(static_cast<std::size_t>(T) + 1, 1.0);
  sched.alpha_bars.assign(static_cast<std::size_t>(T) + 1, 1.0);
  const double f0 = f(0);
  for (int t = 1; t <= T; ++t) {
    const double raw = (f(t) / f0) / (f(t - 1) / f0);
    const double a = std::clamp(raw, 0.001, 0.9999);
    sched.alphas[static_cast<std::size_t>(t)] = a;
    sched.alpha_bars[static_cast<std::size_t>(t)] = sched.alpha_bars[static_cast<std::size_t>(t) - 1] * a;
  }
  return sched;
}

Raster forward_marginal(const Raster& x0, int t, const Raster& eps, const NoiseSchedule& sched) {
  check_t(t, sched);
  if (!x0.same_shape(eps)) throw DimensionError("forward_marginal: noise shape differs from x0");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Raster out = x0.like();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + b * eps.data()[i];
  return out;
}

Raster forward_step(const Raster& x_prev, int t, const NoiseSchedule& sched, SeededRng& rng) {
  const double at = sched.alpha(t);
  const double a = std::sqrt(at);
  const double b = std::sqrt(1.0 - at);
  Raster out = x_prev.like();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x_prev.data()[i] + b * rng.normal();
  return out;
}

PosteriorCoefs posterior_coefs(int t, const NoiseSchedule& sched) {
  const double at = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  PosteriorCoefs c;
  c.c_x0 = std::sqrt(ab_prev) * (1.0 - at) / (1.0 - ab);
  c.c_xt = std::sqrt(at) * (1.0 - ab_prev) / (1.0 - ab);
  c.variance = (1.0 - ab_prev) * (1.0 - at) / (1.0 - ab);
  return c;
}

Raster reverse_step(const Raster& x_t, int t, const Raster& x0_pred, const NoiseSchedule& sched, SeededRng& rng) {
  check_t(t, sched);
  if (!x_t.same_shape(x0_pred)) throw DimensionError("reverse_step: x0 prediction shape differs from x_t");
  const PosteriorCoefs c = posterior_coefs(t, sched);
  const double sd = std::sqrt(c.variance);
  Raster out = x_t.like();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mu = c.c_x0 * x0_pred.data()[i] + c.c_xt * x_t.data()[i];
    if (t > 1) mu += sd * rng.normal();
    out.data()[i] = mu;
  }
  return out;
}

Raster sample(const Denoiser& denoiser, const Raster& u, std::span<const double> v, const NoiseSchedule& sched,
              SeededRng& rng, int bands, int height, int width) {
  Raster x(bands, height, width);
  for (double& p : x.data()) p = rng.normal();
  for (int t = sched.T; t >= 1; --t) {
    Raster x0 = denoiser(x, t, u, v);
    if (!x0.same_shape(x)) throw DimensionError("denoiser output shape differs from its input");
    x = reverse_step(x, t, x0, sched, rng);
  }
  return x;
}

std::vector<double> timestep_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ParameterError("timestep embedding width must be even and positive");
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int d = 0; d < dim / 2; ++d) {
    const double w = std::pow(10000.0, -2.0 * d / dim);
    e[static_cast<std::size_t>(2 * d)] = std::sin(w * t);
    e[static_cast<std::size_t>(2 * d + 1)] = std::cos(w * t);
  }
  return e;
}

namespace nn {

DaConv::DaConv(const std::string& name, int cin, int cout, int vdim)
    : conv(name + ".conv", cin, cout, 3), modulation(name + ".mod", vdim, cout) {}

Var DaConv::operator()(Graph& g, Var x, Var v) {
  Var base = conv2d(x, g.param(conv.weight), Var{});
  Var m = add_scalar(modulation(g, v), 1.0);
  return add_channel(mul_channel(base, m), g.param(conv.bias));
}

void DaConv::init(SeededRng& rng) {
  conv.init(rng);
  modulation.init(rng, 0.1);
}

void DaConv::collect(ParamList& out) {
  conv.collect(out);
  modulation.collect(out);
}

DegradationEncoder::DegradationEncoder(int bands, int features, int width_)
    : c1("deg.c1", bands, features, 3),
      c2("deg.c2", features, features, 3),
      c3("deg.c3", features, 2 * features, 3),
      head("deg.head", 2 * features, width_),
      width(width_) {}

Var DegradationEncoder::operator()(Graph& g, Var x) {
  Var h = leaky_relu(c1(g, x), kLeakySlope);
  h = leaky_relu(c2(g, h), kLeakySlope);
  h = leaky_relu(c3(g, h), kLeakySlope);
  return head(g, global_avg_pool(h));
}

void DegradationEncoder::init(SeededRng& rng) {
  c1.init(rng);
  c2.init(rng);
  c3.init(rng);
  head.init(rng);
}

void DegradationEncoder::collect(ParamList& out) {
  c1.collect(out);
  c2.collect(out);
  c3.collect(out);
  head.collect(out);
}

SpatialEncoder::SpatialEncoder(int bands, int features, int nblocks) : head("spatial.head", bands, features, 3) {
  for (int i = 0; i < nblocks; ++i) blocks.emplace_back("spatial.rrdb" + std::to_string(i), features, features / 2);
}

Var SpatialEncoder::operator()(Graph& g, Var lr) {
  Var h = head(g, lr);
  for (Rrdb& b : blocks) h = b(g, h);
  return h;
}

void SpatialEncoder::init(SeededRng& rng) {
  head.init(rng);
  for (Rrdb& b : blocks) b.init(rng);
}

void SpatialEncoder::collect(ParamList& out) {
  head.collect(out);
  for (Rrdb& b : blocks) b.collect(out);
}

ConsistencyDecoder::ConsistencyDecoder(int features, int bands, int scale_)
    : out("decoder.out", features, bands * scale_ * scale_, 3), scale(scale_) {}

Var ConsistencyDecoder::operator()(Graph& g, Var u, Var lr_up) {
  return add(lr_up, pixel_unfold(out(g, u), scale));
}

void ConsistencyDecoder::init(SeededRng& rng) { out.init(rng, 0.1); }

void ConsistencyDecoder::collect(ParamList& o) { out.collect(o); }

ToyDenoiser::ToyDenoiser(const ToyDenoiserConfig& c)
    : config(c),
      in("den.in", c.bands * c.scale * c.scale + c.features, c.features, 3),
      time1("den.time1", c.time_dim, c.features),
      time2("den.time2", c.features, c.features),
      out("den.out", c.features, c.bands * c.scale * c.scale, 3) {
  for (int i = 0; i < c.blocks; ++i) {
    block_a.emplace_back("den.block" + std::to_string(i) + ".a", c.features, c.features, c.embed_dim);
    block_b.emplace_back("den.block" + std::to_string(i) + ".b", c.features, c.features, c.embed_dim);
  }
}

Var ToyDenoiser::operator()(Graph& g, Var x_t, const std::vector<int>& t, Var u, Var v, Var lr_up) {
  const int n = x_t.shape().n;
  if (static_cast<int>(t.size()) != n) throw DimensionError("one timestep per batch sample required");
  std::vector<double> temb;
  for (int ti : t) {
    auto e = timestep_embedding(ti, config.time_dim);
    temb.insert(temb.end(), e.begin(), e.end());
  }
  Var te = time2(g, leaky_relu(time1(g, g.input(Shape{n, config.time_dim, 1, 1}, std::move(temb))), kLeakySlope));

  Var h = in(g, concat_channels({pixel_fold(x_t, config.scale), u}));
  h = add_channel(h, te);
  for (std::size_t i = 0; i < block_a.size(); ++i) {
    Var r = leaky_relu(block_a[i](g, h, v), kLeakySlope);
    h = add(h, block_b[i](g, r, v));
  }
  return add(lr_up, pixel_unfold(out(g, leaky_relu(h, kLeakySlope)), config.scale));
}

void ToyDenoiser::init(SeededRng& rng) {
  in.init(rng);
  time1.init(rng);
  time2.init(rng);
  for (std::size_t i = 0; i < block_a.size(); ++i) {
    block_a[i].init(rng);
    block_b[i].init(rng);
    block_b[i].conv.init(rng, 0.1);
  }
  out.init(rng, 0.1);
}

void ToyDenoiser::collect(ParamList& o) {
  in.collect(o);
  time1.collect(o);
  time2.collect(o);
  for (std::size_t i = 0; i < block_a.size(); ++i) {
    block_a[i].collect(o);
    block_b[i].collect(o);
  }
  out.collect(o);
}

Var total_loss(Var x0, Var x0_pred, Var x0_decoder, Var contrast, double lambda_contrast) {
  Var loss = add(l1_loss(x0_pred, x0), l1_loss(x0_decoder, x0));
  if (contrast.valid() && lambda_contrast != 0.0) loss = add(loss, scale(contrast, lambda_contrast));
  return loss;
}

}  // namespace nn

ToyDiffusionModel::ToyDiffusionModel(const nn::ToyDenoiserConfig& c)
    : config(c),
      spatial(c.bands, c.features, c.encoder_blocks),
      decoder(c.features, c.bands, c.scale),
      degradation(c.bands, c.features, c.embed_dim),
      denoiser(c) {}

void ToyDiffusionModel::init(SeededRng& rng) {
  spatial.init(rng);
  decoder.init(rng);
  degradation.init(rng);
  denoiser.init(rng);
}

nn::ParamList ToyDiffusionModel::params() {
  nn::ParamList p = inference_params();
  decoder.collect(p);
  return p;
}

nn::ParamList ToyDiffusionModel::inference_params() {
  nn::ParamList p;
  spatial.collect(p);
  degradation.collect(p);
  denoiser.collect(p);
  return p;
}

void save_toy_model(const std::filesystem::path& path, ToyDiffusionModel& model, int T) {
  const nn::ToyDenoiserConfig& c = model.config;
  nn::CheckpointMeta meta{{"bands", std::to_string(c.bands)},
                          {"scale", std::to_string(c.scale)},
                          {"features", std::to_string(c.features)},
                          {"blocks", std::to_string(c.blocks)},
                          {"encoder_blocks", std::to_string(c.encoder_blocks)},
                          {"embed_dim", std::to_string(c.embed_dim)},
                          {"time_dim", std::to_string(c.time_dim)},
                          {"T", std::to_string(T)}};
  nn::save_checkpoint(path, model.params(), meta);
}

ToyDiffusionModel load_toy_model(const std::filesystem::path& path, int* T) {
  const nn::CheckpointMeta meta = nn::read_checkpoint_meta(path);
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw IoError(path.string() + ": missing checkpoint meta '" + k + "'");
    return std::stoi(it->second);
  };
  nn::ToyDenoiserConfig c;
  c.bands = get("bands");
  c.scale = get("scale");
  c.features = get("features");
  c.blocks = get("blocks");
  c.encoder_blocks = get("encoder_blocks");
  c.embed_dim = get("embed_dim");
  c.time_dim = get("time_dim");
  ToyDiffusionModel model(c);
  nn::load_checkpoint(path, model.params());
  if (T) *T = get("T");
  return model;
}

Raster to_unit(const Raster& img) {
  Raster out = img.like();
  for (int c = 0; c < img.bands(); ++c) {
    const BandSpec& m = img.meta(c);
    const double half = m.dynamic_range() / 2.0;
    auto src = img.band(c);
    auto dst = out.band(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - m.min_value) / half - 1.0;
  }
  return out;
}

Raster from_unit(const Raster& img, const Raster& like) {
  if (img.bands() != like.bands()) throw DimensionError("from_unit: band count mismatch");
  Raster out = img;
  out.meta() = like.meta();
  for (int c = 0; c < img.bands(); ++c) {
    const BandSpec& m = like.meta(c);
    const double half = m.dynamic_range() / 2.0;
    for (double& v : out.band(c)) v = (v + 1.0) * half + m.min_value;
  }
  return out;
}

using nn::Var;

namespace {

Raster crop(const Raster& img, int y0, int x0, int h, int w) {
  Raster out(img.bands(), h, w);
  out.meta() = img.meta();
  for (int c = 0; c < img.bands(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

Raster flip_horizontal(const Raster& img) {
  Raster out = img;
  for (int c = 0; c < img.bands(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
  return out;
}

struct ToySample {
  Raster hr;  // unit scale
  Raster lr;  // unit scale
  Raster lr_up;
};

class ToyData {
 public:
  ToyData(const ToyTrainConfig& cfg, int bands, int scale) : cfg_(cfg), scale_(scale) {
    if (cfg.patch % (2 * scale) != 0) throw ParameterError("toy patch must be divisible by twice the scale");
    if (cfg.scenes < 1) throw ParameterError("toy training needs at least one scene");
    const int size = std::max(2 * cfg.patch, 64);
    for (int i = 0; i < cfg.scenes; ++i) {
      SceneSpec spec;
      spec.height = spec.width = size;
      spec.bands = bands;
      spec.seed = cfg.seed * 7919 + static_cast<std::uint64_t>(i);
      scenes_.push_back(gen_scene(spec));
    }
  }

  ToySample draw(SeededRng& rng) const {
    const Raster& scene = scenes_[static_cast<std::size_t>(rng.below(scenes_.size()))];
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(scene.height() - cfg_.patch + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(scene.width() - cfg_.patch + 1)));
    Raster hr = crop(scene, y0, x0, cfg_.patch, cfg_.patch);
    if (rng.uniform() < 0.5) hr = flip_horizontal(hr);
    DegradationSpec deg;
    deg.blur = sample_blur(rng, cfg_.blur);
    deg.scale = scale_;
    deg.noise_sigma = rng.uniform(0.0, cfg_.noise_max);
    Raster lr = degrade(hr, deg, rng);
    ToySample s;
    s.hr = to_unit(hr);
    s.lr = to_unit(lr);
    s.lr_up = resample_bicubic(s.lr, Scale::up(scale_));
    return s;
  }

 private:
  const ToyTrainConfig& cfg_;
  int scale_;
  std::vector<Raster> scenes_;
};

}  // namespace

ToyTrainResult train_toy_diffusion(ToyDiffusionModel& model, const ToyTrainConfig& cfg) {
  if (cfg.steps < 1) throw ParameterError("training needs at least one step");
  const NoiseSchedule sched = cosine_schedule(cfg.T);
  SeededRng rng(cfg.seed);
  ToyData data(cfg, model.config.bands, model.config.scale);
  nn::ParamList params = model.params();
  nn::Adam adam(params, nn::AdamConfig{cfg.lr});
  nn::Ema ema(params, kEmaDecay, true);
  const int lr_patch = cfg.patch / model.config.scale;
  const int crop_size = lr_patch / 2;
  ToyTrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    ToySample s = data.draw(rng);
    std::vector<Raster> negs;
    for (int j = 0; j < cfg.negatives; ++j) negs.push_back(data.draw(rng).lr);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
    Raster eps = s.hr.like();
    for (double& e : eps.data()) e = rng.normal();
    Raster x_t = forward_marginal(s.hr, t, eps, sched);

    // Two crops of the same LR image form the positive pair; crops of other
    // images (different sampled degradations) are the negatives.
    auto rand_crop = [&](const Raster& img) {
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height() - crop_size + 1)));
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width() - crop_size + 1)));
      return crop(img, y, x, crop_size, crop_size);
    };
    std::vector<Raster> crops{rand_crop(s.lr), rand_crop(s.lr)};
    for (const Raster& n : negs) crops.push_back(rand_crop(n));
    std::vector<const Raster*> crop_ptrs;
    for (const Raster& c : crops) crop_ptrs.push_back(&c);

    nn::Graph g;
    Var emb = model.degradation(g, nn::raster_batch(g, crop_ptrs));
    Var vq = nn::slice_batch(emb, 0, 1);
    Var vp = nn::slice_batch(emb, 1, 1);
    Var vn = cfg.negatives > 0 ? nn::slice_batch(emb, 2, cfg.negatives) : Var{};
    Var contrast = nn::infonce(vq, vp, vn, cfg.tau);

    Var lr_v = nn::raster_input(g, s.lr);
    Var lr_up = nn::raster_input(g, s.lr_up);
    Var u = model.spatial(g, lr_v);
    Var x0_pred = model.denoiser(g, nn::raster_input(g, x_t), {t}, u, vq, lr_up);
    Var x0_dec = model.decoder(g, u, lr_up);
    Var loss = nn::total_loss(nn::raster_input(g, s.hr), x0_pred, x0_dec, contrast, cfg.lambda_contrast);
    adam.zero_grad();
    g.backward(loss);
    adam.step();
    ema.update(params);
    result.losses.push_back(loss.item());
  }
  ema.copy_debiased_to(params);
  return result;
}

ToyTrainResult train_consistency_proxy(ToyDiffusionModel& model, const ToyTrainConfig& cfg) {
  if (cfg.steps < 1) throw ParameterError("training needs at least one step");
  SeededRng rng(cfg.seed);
  ToyData data(cfg, model.config.bands, model.config.scale);
  nn::ParamList params;
  model.spatial.collect(params);
  model.decoder.collect(params);
  nn::Adam adam(params, nn::AdamConfig{cfg.lr});
  ToyTrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    ToySample s = data.draw(rng);
    nn::Graph g;
    Var u = model.spatial(g, nn::raster_input(g, s.lr));
    Var est = model.decoder(g, u, nn::raster_input(g, s.lr_up));
    Var loss = nn::l1_loss(est, nn::raster_input(g, s.hr));
    adam.zero_grad();
    g.backward(loss);
    adam.step();
    result.losses.push_back(loss.item());
  }
  return result;
}

Raster toy_decoder_estimate(ToyDiffusionModel& model, const Raster& lr) {
  Raster lr_u = to_unit(lr);
  Raster up = resample_bicubic(lr_u, Scale::up(model.config.scale));
  nn::Graph g;
  Var u = model.spatial(g, nn::raster_input(g, lr_u));
  Var est = model.decoder(g, u, nn::raster_input(g, up));
  Raster like = resample_bicubic(lr, Scale::up(model.config.scale));
  return from_unit(nn::to_raster(est), like);
}

Raster toy_super_resolve(ToyDiffusionModel& model, const Raster& lr, const NoiseSchedule& sched, SeededRng& rng) {
  if (lr.bands() != model.config.bands) throw DimensionError("toy model band count differs from the input");
  Raster lr_u = to_unit(lr);
  Raster up = resample_bicubic(lr_u, Scale::up(model.config.scale));
  std::vector<double> v;
  Raster u;
  {
    nn::Graph g;
    Var lv = nn::raster_input(g, lr_u);
    Var emb = model.degradation(g, lv);
    v.assign(emb.value().begin(), emb.value().end());
    Var uf = model.spatial(g, lv);
    u = nn::to_raster(uf);
  }
  Denoiser den = [&](const Raster& x_t, int t, const Raster& feat, std::span<const double> vv) {
    nn::Graph g;
    Var vvar = g.input(nn::Shape{1, static_cast<int>(vv.size()), 1, 1}, std::vector<double>(vv.begin(), vv.end()));
    Var out = model.denoiser(g, nn::raster_input(g, x_t), {t}, nn::raster_input(g, feat), vvar, nn::raster_input(g, up));
    return nn::to_raster(out);
  };
  Raster x = sample(den, u, v, sched, rng, up.bands(), up.height(), up.width());
  Raster like = resample_bicubic(lr, Scale::up(model.config.scale));
  return from_unit(x, like);
}

}  // namespace s2fuse
