#include "s2fuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "s2fuse/degradation.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/metrics.hpp"
#include "s2fuse/raster_io.hpp"
#include "s2fuse/resample.hpp"

namespace s2fuse {

using nn::Graph;
using nn::Shape;
using nn::Var;

const GroupInfo& group_info(BandGroup group) {
  static const GroupInfo g10{"10m", 4, 10.0, {"B02", "B03", "B04", "B08"}};
  static const GroupInfo g20{"20m", 8, 20.0, {"B05", "B06", "B07", "B8A", "B11", "B12"}};
  static const GroupInfo g60{"60m", 24, 60.0, {"B01", "B09"}};
  switch (group) {
    case BandGroup::G10m: return g10;
    case BandGroup::G20m: return g20;
    case BandGroup::G60m: return g60;
  }
  return g10;
}

BandGroup parse_group(const std::string& text) {
  if (text == "10m") return BandGroup::G10m;
  if (text == "20m") return BandGroup::G20m;
  if (text == "60m") return BandGroup::G60m;
  throw ParameterError("band group must be 10m, 20m or 60m, got '" + text + "'");
}

double mtf_sigma(double gnyq, int ratio) {
  if (!(gnyq > 0.0 && gnyq < 1.0)) throw ParameterError("gnyq must lie in (0, 1)");
  if (ratio < 1) throw ParameterError("ratio must be >= 1");
  return ratio / std::numbers::pi * std::sqrt(2.0 * std::log(1.0 / gnyq));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of no logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(logits[i] - mx));
  for (double& v : w) v /= total;
  return w;
}

Raster mix_pan(const Raster& rgb, std::span<const double> logits) {
  if (rgb.bands() != 3) throw DimensionError("mix_pan needs a 3-band guide, got " + std::to_string(rgb.bands()));
  if (logits.size() != 3) throw DimensionError("mix_pan needs 3 logits");
  const auto w = softmax(logits);
  Raster p(1, rgb.height(), rgb.width(), 0.0);
  p.meta(0) = rgb.meta(0);
  p.meta(0).name = "pan";
  auto dst = p.band(0);
  // Same accumulation order as the graph op so the two agree bit-for-bit.
  for (int c = 0; c < 3; ++c) {
    auto src = rgb.band(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w[static_cast<std::size_t>(c)] * src[i];
  }
  return p;
}

GlpDetail glp_detail(const Raster& p, double sigma, int ratio) {
  if (p.bands() != 1) throw DimensionError("glp_detail expects a single-band raster");
  if (ratio < 1) throw ParameterError("ratio must be >= 1");
  const Kernel2D k = gaussian_kernel(sigma);
  Raster low = resample_bicubic(boxcar_downsample(conv2d_reflect(p, k), ratio), Scale::up(ratio));
  low.meta() = p.meta();
  Raster delta = p.like();
  for (std::size_t i = 0; i < p.size(); ++i) delta.data()[i] = p.data()[i] - low.data()[i];
  return {std::move(low), std::move(delta)};
}

// ---- sub-networks --------------------------------------------------------

DetailNet::DetailNet(int bands, int width, int nblocks)
    : in("detail.in", 1 + bands, width, 3), out("detail.out", width, 1, 3) {
  for (int i = 0; i < nblocks; ++i) blocks.emplace_back("detail.rrdb" + std::to_string(i), width, width / 2);
}

Var DetailNet::operator()(Graph& g, Var x) {
  Var h = nn::leaky_relu(in(g, x), nn::kLeakySlope);
  for (nn::Rrdb& b : blocks) h = b(g, h);
  return out(g, h);
}

void DetailNet::init(SeededRng& rng) {
  in.init(rng);
  for (nn::Rrdb& b : blocks) b.init(rng);
  out.zero();
}

void DetailNet::collect(nn::ParamList& o) {
  in.collect(o);
  for (nn::Rrdb& b : blocks) b.collect(o);
  out.collect(o);
}

GainNet::GainNet(int width) : in("gain.in", 3, width, 3), out("gain.out", width, 1, 1) {}

Var GainNet::operator()(Graph& g, Var x) { return out(g, nn::leaky_relu(in(g, x), nn::kLeakySlope)); }

void GainNet::init(SeededRng& rng) {
  in.init(rng);
  out.zero();
}

void GainNet::collect(nn::ParamList& o) {
  in.collect(o);
  out.collect(o);
}

RefineNet::RefineNet(int bands, int width, int nblocks)
    : in("refine.in", bands + 1, width, 3), out("refine.out", width, bands, 3) {
  for (int i = 0; i < nblocks; ++i) blocks.emplace_back("refine.res" + std::to_string(i), width);
}

Var RefineNet::operator()(Graph& g, Var x) {
  Var h = nn::leaky_relu(in(g, x), nn::kLeakySlope);
  for (nn::ResBlock& b : blocks) h = b(g, h);
  return out(g, h);
}

void RefineNet::init(SeededRng& rng) {
  in.init(rng);
  for (nn::ResBlock& b : blocks) b.init(rng);
  out.zero();
}

void RefineNet::collect(nn::ParamList& o) {
  in.collect(o);
  for (nn::ResBlock& b : blocks) b.collect(o);
  out.collect(o);
}

// ---- parameters ------------------------------------------------------------

FusionParams::FusionParams(const FusionConfig& c, std::span<const double> gnyq)
    : config(c),
      mixer_logits("mixer.logits", Shape{1, 3, 1, 1}),
      detail(c.bands, c.detail_width, c.detail_blocks),
      gain(c.gain_width),
      refine(c.bands, c.refine_width, c.refine_blocks) {
  if (c.bands < 1) throw ParameterError("fusion needs at least one band");
  if (c.ratio < 1) throw ParameterError("fusion ratio must be >= 1");
  if (!(c.value_scale > 0.0)) throw ParameterError("value scale must be positive");
  if (gnyq.size() != 1 && gnyq.size() != static_cast<std::size_t>(c.bands))
    throw DimensionError("need one gnyq per band (or a single shared value)");
  for (int b = 0; b < c.bands; ++b) mtf_sigmas.push_back(mtf_sigma(gnyq[gnyq.size() == 1 ? 0 : b], c.ratio));
}

void FusionParams::init(SeededRng& rng) {
  std::fill(mixer_logits.value.begin(), mixer_logits.value.end(), 0.0);
  detail.init(rng);
  gain.init(rng);
  refine.init(rng);
}

nn::ParamList FusionParams::trainable() {
  nn::ParamList p{&mixer_logits};
  detail.collect(p);
  gain.collect(p);
  refine.collect(p);
  return p;
}

std::size_t FusionParams::parameter_count() { return nn::count_parameters(trainable()); }

void FusionParams::save(const std::filesystem::path& path) {
  nn::CheckpointMeta meta;
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    meta[k] = s.str();
  };
  put("bands", config.bands);
  put("ratio", config.ratio);
  put("detail_width", config.detail_width);
  put("detail_blocks", config.detail_blocks);
  put("gain_width", config.gain_width);
  put("refine_width", config.refine_width);
  put("refine_blocks", config.refine_blocks);
  put("value_scale", config.value_scale);
  std::ostringstream sig;
  sig.precision(17);
  for (std::size_t i = 0; i < mtf_sigmas.size(); ++i) sig << (i ? "," : "") << mtf_sigmas[i];
  meta["mtf_sigmas"] = sig.str();
  nn::save_checkpoint(path, trainable(), meta);
}

FusionParams FusionParams::load(const std::filesystem::path& path) {
  const nn::CheckpointMeta meta = nn::read_checkpoint_meta(path);
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw IoError(path.string() + ": missing checkpoint meta '" + k + "'");
    return it->second;
  };
  FusionConfig c;
  c.bands = std::stoi(get("bands"));
  c.ratio = std::stoi(get("ratio"));
  c.detail_width = std::stoi(get("detail_width"));
  c.detail_blocks = std::stoi(get("detail_blocks"));
  c.gain_width = std::stoi(get("gain_width"));
  c.refine_width = std::stoi(get("refine_width"));
  c.refine_blocks = std::stoi(get("refine_blocks"));
  c.value_scale = std::stod(get("value_scale"));
  const std::vector<double> shared{0.3};
  FusionParams p(c, shared);
  std::istringstream sig(get("mtf_sigmas"));
  std::string tok;
  p.mtf_sigmas.clear();
  while (std::getline(sig, tok, ',')) p.mtf_sigmas.push_back(std::stod(tok));
  if (p.mtf_sigmas.size() != static_cast<std::size_t>(c.bands)) throw IoError("checkpoint sigma count mismatch");
  nn::load_checkpoint(path, p.trainable());
  return p;
}

// ---- samples -----------------------------------------------------------------

void FusionSample::validate(int ratio) const {
  if (guide.bands() != 3) throw DimensionError("fusion guide must have 3 bands");
  if (guide.height() != ratio * ms_lr.height() || guide.width() != ratio * ms_lr.width())
    throw DimensionError("guide " + std::to_string(guide.height()) + "x" + std::to_string(guide.width()) +
                         " is not " + std::to_string(ratio) + "x the MS grid " + std::to_string(ms_lr.height()) +
                         "x" + std::to_string(ms_lr.width()));
  if (target && (target->height() != guide.height() || target->width() != guide.width() ||
                 target->bands() != ms_lr.bands()))
    throw DimensionError("fusion target does not match the guide grid / MS bands");
}

FusionSample make_wald_sample(const Raster& ms, const Raster& rgb, int ratio, bool mtf_blur) {
  if (rgb.bands() != 3) throw DimensionError("guide must have 3 bands");
  Raster guide = rgb;
  if (rgb.height() != ms.height() || rgb.width() != ms.width()) {
    if (rgb.height() % ms.height() != 0 || rgb.width() % ms.width() != 0 ||
        rgb.height() / ms.height() != rgb.width() / ms.width())
      throw DimensionError("guide grid must be an integer multiple of the MS grid");
    guide = boxcar_downsample(rgb, rgb.height() / ms.height());
  }
  std::optional<std::vector<double>> sigmas;
  if (mtf_blur) {
    sigmas.emplace();
    for (int b = 0; b < ms.bands(); ++b) sigmas->push_back(mtf_sigma(ms.meta(b).gnyq, ratio));
  }
  WaldPair pair = wald_pair(ms, ratio, sigmas);
  FusionSample s{std::move(pair.input), std::move(guide), ms};
  s.validate(ratio);
  return s;
}

// ---- forward -----------------------------------------------------------------

Var fuse_graph(Graph& g, Var ms_up, Var guide, FusionParams& params) {
  const Shape xs = ms_up.shape();
  const int n = xs.n, c = xs.c;
  if (c != params.config.bands) throw DimensionError("MS band count differs from the fusion parameters");
  if (guide.shape().c != 3 || guide.shape().n != n || guide.shape().h != xs.h || guide.shape().w != xs.w)
    throw DimensionError("guide " + guide.shape().str() + " does not match MS " + xs.str());
  const double inv = 1.0 / params.config.value_scale;
  const double fwd = params.config.value_scale;

  // (1) pan proxy from convex guide weights
  Var w = nn::softmax(g.param(params.mixer_logits));
  Var p = nn::weighted_channel_sum(guide, w);
  // (2) per-band GLP details
  Var p_low = nn::glp_lowpass(p, params.mtf_sigmas, params.config.ratio);
  Var delta = nn::sub(nn::repeat_channels(p, c), p_low);
  // (3) detail refinement, one band per batch entry
  Var delta_b = nn::reshape(delta, Shape{n * c, 1, xs.h, xs.w});
  Var x_tiled = nn::tile_batch(ms_up, c);
  Var det_in = nn::scale(nn::concat_channels({delta_b, x_tiled}), inv);
  Var delta_hat = nn::add(delta, nn::reshape(nn::scale(params.detail(g, det_in), fwd), xs));
  // (4) gains around unity
  Var x_mean = nn::channel_mean(ms_up);
  Var gain_in = nn::scale(nn::concat_channels({nn::tile_batch(p, c), nn::reshape(p_low, Shape{n * c, 1, xs.h, xs.w}),
                                               nn::tile_batch(x_mean, c)}),
                          inv);
  Var gains = nn::add_scalar(nn::reshape(params.gain(g, gain_in), xs), 1.0);
  // (5) injection and refinement
  Var y = nn::add(ms_up, nn::mul(gains, delta_hat));
  Var ref_in = nn::scale(nn::concat_channels({y, nn::channel_mean(delta_hat)}), inv);
  return nn::add(y, nn::scale(params.refine(g, ref_in), fwd));
}

Raster fuse(const Raster& ms_lr, const Raster& guide, FusionParams& params) {
  FusionSample{ms_lr, guide, std::nullopt}.validate(params.config.ratio);
  Raster up = resample_bicubic(ms_lr, Scale::up(params.config.ratio));
  Graph g;
  Var out = fuse_graph(g, nn::raster_input(g, up), nn::raster_input(g, guide), params);
  return nn::to_raster(out, 0, &up);
}

Raster fuse_at_inference(const Raster& ms_native, const Raster& sr_guide, FusionParams& params) {
  return fuse(ms_native, sr_guide, params);
}

// ---- training ------------------------------------------------------------------

double evaluate_fusion_ergas(const std::vector<FusionSample>& samples, FusionParams& params) {
  double total = 0.0;
  int count = 0;
  for (const FusionSample& s : samples) {
    if (!s.target) continue;
    total += ergas(*s.target, fuse(s.ms_lr, s.guide, params), params.config.ratio);
    ++count;
  }
  if (count == 0) throw ParameterError("no samples with targets to evaluate");
  return total / count;
}

namespace {

Raster crop(const Raster& img, int y0, int x0, int h, int w) {
  Raster out(img.bands(), h, w);
  out.meta() = img.meta();
  for (int c = 0; c < img.bands(); ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(img.band(c).begin() + static_cast<std::ptrdiff_t>((y0 + y) * img.width() + x0), w,
                  out.band(c).begin() + static_cast<std::ptrdiff_t>(y * w));
  return out;
}

}  // namespace

FusionTrainResult train_fusion(const std::vector<FusionSample>& train, const std::vector<FusionSample>& val,
                               FusionParams& params, const FusionTrainConfig& cfg) {
  if (train.empty()) throw ParameterError("fusion training needs at least one sample");
  const int r = params.config.ratio;
  if (cfg.tile < r || cfg.tile % r != 0) throw ParameterError("training tile must be a positive multiple of the ratio");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.eval_every < 1) throw ParameterError("bad fusion training schedule");
  for (const FusionSample& s : train) {
    s.validate(r);
    if (!s.target) throw ParameterError("training samples need targets");
    if (s.guide.height() < cfg.tile || s.guide.width() < cfg.tile)
      throw DimensionError("training sample smaller than the tile size");
  }
  const std::vector<FusionSample>& val_set = val.empty() ? train : val;

  SeededRng rng(cfg.seed);
  nn::ParamList params_list = params.trainable();
  nn::Adam adam(params_list, nn::AdamConfig{cfg.lr});
  FusionTrainResult result;
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (const nn::ParamTensor* p : params_list) best.push_back(p->value);
  };
  result.best_val_ergas = evaluate_fusion_ergas(val_set, params);
  result.val_ergas.push_back(result.best_val_ergas);
  snapshot();

  const int lt = cfg.tile / r;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Raster> ups, guides, targets;
    for (int b = 0; b < cfg.batch; ++b) {
      const FusionSample& s = train[static_cast<std::size_t>(rng.below(train.size()))];
      const int ly = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.ms_lr.height() - lt + 1)));
      const int lx = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.ms_lr.width() - lt + 1)));
      ups.push_back(resample_bicubic(crop(s.ms_lr, ly, lx, lt, lt), Scale::up(r)));
      guides.push_back(crop(s.guide, ly * r, lx * r, cfg.tile, cfg.tile));
      targets.push_back(crop(*s.target, ly * r, lx * r, cfg.tile, cfg.tile));
    }
    auto ptrs = [](const std::vector<Raster>& v) {
      std::vector<const Raster*> out;
      for (const Raster& x : v) out.push_back(&x);
      return out;
    };
    Graph g;
    Var pred = fuse_graph(g, nn::raster_batch(g, ptrs(ups)), nn::raster_batch(g, ptrs(guides)), params);
    Var loss = nn::l1_loss(pred, nn::raster_batch(g, ptrs(targets)));
    adam.zero_grad();
    g.backward(loss);
    adam.step();
    result.train_losses.push_back(loss.item());

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const double e = evaluate_fusion_ergas(val_set, params);
      result.val_ergas.push_back(e);
      info("fusion step " + std::to_string(step) + " loss " + std::to_string(loss.item()) + " val ERGAS " +
           std::to_string(e));
      if (e < result.best_val_ergas) {
        result.best_val_ergas = e;
        result.best_step = step;
        snapshot();
      }
    }
  }
  for (std::size_t k = 0; k < params_list.size(); ++k) params_list[k]->value = best[k];
  return result;
}

}  // namespace s2fuse
