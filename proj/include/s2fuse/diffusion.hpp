#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "s2fuse/degradation.hpp"
#include "s2fuse/nn/layers.hpp"
#include "s2fuse/nn/optim.hpp"
#include "s2fuse/raster.hpp"
#include "s2fuse/rng.hpp"

namespace s2fuse {

/// Diffusion schedule. alpha(t) for t in [1, T]; alpha_bar(t) for t in
/// [0, T] with alpha_bar(0) = 1 and alpha_bar(t) = prod_{s<=t} alpha(s).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alphas;      // index t, alphas[0] = 1
  std::vector<double> alpha_bars;  // index t, alpha_bars[0] = 1

  double alpha(int t) const;
  double alpha_bar(int t) const;
};

/// Cosine schedule: alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2).
/// Per-step alphas are clipped to [0.001, 0.9999] and alpha_bar is then
/// recomputed as their running product so the two arrays stay consistent.
NoiseSchedule cosine_schedule(int T = 1000, double s = 0.008);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Raster forward_marginal(const Raster& x0, int t, const Raster& eps, const NoiseSchedule& sched);

/// x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps with fresh eps.
Raster forward_step(const Raster& x_prev, int t, const NoiseSchedule& sched, SeededRng& rng);

/// Coefficients of the x0-parameterized posterior q(x_{t-1} | x_t, x0).
struct PosteriorCoefs {
  double c_x0 = 0.0;
  double c_xt = 0.0;
  double variance = 0.0;
};
PosteriorCoefs posterior_coefs(int t, const NoiseSchedule& sched);

/// One ancestral step; no noise is injected at t = 1.
Raster reverse_step(const Raster& x_t, int t, const Raster& x0_pred, const NoiseSchedule& sched, SeededRng& rng);

/// x0 predictor: (x_t, t, u, v) -> x0 estimate with the shape of x_t.
using Denoiser = std::function<Raster(const Raster& x_t, int t, const Raster& u, std::span<const double> v)>;

/// Draws x_T ~ N(0, I) (bands x height x width) and runs reverse_step from
/// T down to 1. The noise for every step t > 1 is drawn after x_T.
Raster sample(const Denoiser& denoiser, const Raster& u, std::span<const double> v, const NoiseSchedule& sched,
              SeededRng& rng, int bands, int height, int width);

/// Interleaved sinusoidal embedding: [sin(w0 t), cos(w0 t), sin(w1 t), ...],
/// w_d = 10000^(-2d/dim).
std::vector<double> timestep_embedding(double t, int dim);

namespace nn {

/// Convolution whose 3x3 kernels are scaled per output channel by
/// (1 + dense(v)); bias added after modulation.
struct DaConv {
  Conv2d conv;
  Dense modulation;

  DaConv() = default;
  DaConv(const std::string& name, int cin, int cout, int vdim);

  /// x: N x Cin x H x W, v: N x vdim (or 1 x vdim).
  Var operator()(Graph& g, Var x, Var v);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// Small conv stack, global average pooling and a dense projection head.
struct DegradationEncoder {
  Conv2d c1, c2, c3;
  Dense head;
  int width = 64;

  DegradationEncoder() = default;
  DegradationEncoder(int bands, int features = 32, int width = 64);

  /// N x C x h x w -> N x width x 1 x 1.
  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// conv + RRDB stack on the LR image; output is the spatial feature map u.
struct SpatialEncoder {
  Conv2d head;
  std::vector<Rrdb> blocks;

  SpatialEncoder() = default;
  SpatialEncoder(int bands, int features, int nblocks);

  Var operator()(Graph& g, Var lr);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// Coarse HR estimate from u: conv to C*r^2 channels, pixel unfold, plus the
/// bicubic-upsampled LR as skip.
struct ConsistencyDecoder {
  Conv2d out;
  int scale = 2;

  ConsistencyDecoder() = default;
  ConsistencyDecoder(int features, int bands, int scale);

  Var operator()(Graph& g, Var u, Var lr_up);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

struct ToyDenoiserConfig {
  int bands = 3;
  int scale = 2;
  int features = 32;
  int blocks = 4;
  int encoder_blocks = 2;
  int embed_dim = 64;
  int time_dim = 32;
};

/// Toy conditional denoiser. x_t is pixel-folded to the LR grid, concatenated
/// with u at the first layer only, passed through DAConv residual blocks with
/// an additive time embedding, then unfolded and added to the upsampled LR.
struct ToyDenoiser {
  ToyDenoiserConfig config;
  Conv2d in;
  Dense time1, time2;
  std::vector<DaConv> block_a, block_b;
  Conv2d out;

  ToyDenoiser() = default;
  explicit ToyDenoiser(const ToyDenoiserConfig& config);

  /// x_t: N x C x H x W, u: N x F x H/r x W/r, v: N x E, lr_up: N x C x H x W.
  Var operator()(Graph& g, Var x_t, const std::vector<int>& t, Var u, Var v, Var lr_up);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// L_elbo + L_consis + lambda * L_contrast. `contrast` may be invalid (0).
Var total_loss(Var x0, Var x0_pred, Var x0_decoder, Var contrast, double lambda_contrast);

}  // namespace nn

inline constexpr double kLambdaContrast = 0.01;
inline constexpr double kEmaDecay = 0.999;

/// Toy blind-SR diffusion model with all of its trainable parts.
struct ToyDiffusionModel {
  nn::ToyDenoiserConfig config;
  nn::SpatialEncoder spatial;
  nn::ConsistencyDecoder decoder;
  nn::DegradationEncoder degradation;
  nn::ToyDenoiser denoiser;

  explicit ToyDiffusionModel(const nn::ToyDenoiserConfig& config = {});
  void init(SeededRng& rng);
  nn::ParamList params();
  /// Parameters needed at inference (decoder excluded).
  nn::ParamList inference_params();
};

/// Checkpoint with the architecture and the schedule length in its meta.
void save_toy_model(const std::filesystem::path& path, ToyDiffusionModel& model, int T);
ToyDiffusionModel load_toy_model(const std::filesystem::path& path, int* T = nullptr);

struct ToyTrainConfig {
  int T = 64;
  int steps = 200;
  int patch = 32;       // HR patch edge
  int scenes = 16;
  double lr = 2e-4;
  double noise_max = 5.0;  // LR noise sigma range [0, noise_max] on 0-255
  double lambda_contrast = kLambdaContrast;
  double tau = 0.5;
  int negatives = 2;
  BlurMode blur = BlurMode::train();
  std::uint64_t seed = 0;
};

struct ToyTrainResult {
  std::vector<double> losses;
};

/// Trains all parts jointly; EMA weights are written back into `model`.
ToyTrainResult train_toy_diffusion(ToyDiffusionModel& model, const ToyTrainConfig& config);

/// Trains only spatial encoder + consistency decoder (the SR proxy path)
/// with L_consis under the given blur regime.
ToyTrainResult train_consistency_proxy(ToyDiffusionModel& model, const ToyTrainConfig& config);

/// Pixel values are mapped to [-1, 1] for the diffusion process.
Raster to_unit(const Raster& img);
Raster from_unit(const Raster& img, const Raster& like);

/// Super-resolves `lr` (0-255 scale) with the trained model.
Raster toy_super_resolve(ToyDiffusionModel& model, const Raster& lr, const NoiseSchedule& sched, SeededRng& rng);

/// Coarse HR estimate from the consistency decoder.
Raster toy_decoder_estimate(ToyDiffusionModel& model, const Raster& lr);

}  // namespace s2fuse
