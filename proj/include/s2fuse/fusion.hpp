#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2fuse/nn/layers.hpp"
#include "s2fuse/nn/optim.hpp"
#include "s2fuse/raster.hpp"

namespace s2fuse {

enum class BandGroup { G10m, G20m, G60m };

struct GroupInfo {
  std::string name;
  int ratio = 4;
  double native_gsd = 10.0;
  std::vector<std::string> bands;
};

const GroupInfo& group_info(BandGroup group);
BandGroup parse_group(const std::string& text);

/// Gaussian std (fine pixels) whose transfer exp(-2 pi^2 sigma^2 f^2) equals
/// gnyq at f = 1/(2 ratio): sigma = (ratio/pi) sqrt(2 ln(1/gnyq)).
double mtf_sigma(double gnyq, int ratio);

std::vector<double> softmax(std::span<const double> logits);

/// Convex combination of the three guide bands with softmax(logits).
Raster mix_pan(const Raster& rgb, std::span<const double> logits);

struct GlpDetail {
  Raster p_low;
  Raster delta;
};

/// p_low = bicubic_up(boxcar_down(gauss_sigma(p), ratio), ratio); delta = p - p_low.
GlpDetail glp_detail(const Raster& p, double sigma, int ratio);

struct FusionConfig {
  int bands = 4;
  int ratio = 4;
  int detail_width = 32;
  int detail_blocks = 2;
  int gain_width = 16;
  int refine_width = 32;
  int refine_blocks = 2;
  /// Networks see inputs divided by this and their residual outputs are
  /// multiplied back, so weights work on a unit scale.
  double value_scale = 255.0;
};

struct DetailNet {
  nn::Conv2d in;
  std::vector<nn::Rrdb> blocks;
  nn::Conv2d out;

  DetailNet() = default;
  DetailNet(int bands, int width, int nblocks);
  nn::Var operator()(nn::Graph& g, nn::Var x);
  void init(SeededRng& rng);
  void collect(nn::ParamList& o);
};

struct GainNet {
  nn::Conv2d in;
  nn::Conv2d out;

  GainNet() = default;
  explicit GainNet(int width);
  nn::Var operator()(nn::Graph& g, nn::Var x);
  void init(SeededRng& rng);
  void collect(nn::ParamList& o);
};

struct RefineNet {
  nn::Conv2d in;
  std::vector<nn::ResBlock> blocks;
  nn::Conv2d out;

  RefineNet() = default;
  RefineNet(int bands, int width, int nblocks);
  nn::Var operator()(nn::Graph& g, nn::Var x);
  void init(SeededRng& rng);
  void collect(nn::ParamList& o);
};

/// Learnable state of one band-group branch.
struct FusionParams {
  FusionConfig config;
  nn::ParamTensor mixer_logits;  // (1, 3, 1, 1)
  std::vector<double> mtf_sigmas;
  DetailNet detail;
  GainNet gain;
  RefineNet refine;

  FusionParams() = default;
  /// Sigmas from per-band gnyq values (one per band, or one for all).
  FusionParams(const FusionConfig& config, std::span<const double> gnyq);

  /// Random hidden layers, zero final layers, equal mixer logits.
  void init(SeededRng& rng);
  nn::ParamList trainable();
  std::size_t parameter_count();

  void save(const std::filesystem::path& path);
  static FusionParams load(const std::filesystem::path& path);
};

/// Wald training/evaluation sample: ms_lr on the coarse grid, guide (RGB) and
/// target on the grid `ratio` times finer.
struct FusionSample {
  Raster ms_lr;
  Raster guide;
  std::optional<Raster> target;

  void validate(int ratio) const;
};

/// Builds a Wald sample from native rasters: the target is `ms`, ms_lr is
/// its (optionally MTF-blurred) boxcar reduction, and the guide is `rgb`
/// brought onto the target grid by boxcar averaging when it is finer.
FusionSample make_wald_sample(const Raster& ms, const Raster& rgb, int ratio, bool mtf_blur = true);

/// Differentiable forward pass. ms_up: N x C x H x W (bicubic-upsampled MS),
/// guide: N x 3 x H x W.
nn::Var fuse_graph(nn::Graph& g, nn::Var ms_up, nn::Var guide, FusionParams& params);

Raster fuse(const Raster& ms_lr, const Raster& guide, FusionParams& params);

/// Same computation as fuse with a super-resolved guide replacing the
/// native one.
Raster fuse_at_inference(const Raster& ms_native, const Raster& sr_guide, FusionParams& params);

struct FusionTrainConfig {
  int steps = 2000;
  int batch = 1;
  int tile = 32;  // target-grid crop edge, multiple of ratio
  double lr = 1e-4;
  int eval_every = 100;
  std::uint64_t seed = 0;
};

struct FusionTrainResult {
  std::vector<double> train_losses;
  std::vector<double> val_ergas;  // one per evaluation (first = initial)
  double best_val_ergas = 0.0;
  int best_step = 0;
};

/// Mean ERGAS of fuse() over samples with targets.
double evaluate_fusion_ergas(const std::vector<FusionSample>& samples, FusionParams& params);

/// l1 training on random tiles; `params` ends holding the best-validation
/// state by ERGAS (the training set is used when `val` is empty).
FusionTrainResult train_fusion(const std::vector<FusionSample>& train, const std::vector<FusionSample>& val,
                               FusionParams& params, const FusionTrainConfig& config);

}  // namespace s2fuse
