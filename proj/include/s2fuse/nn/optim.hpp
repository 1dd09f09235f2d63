#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "s2fuse/nn/graph.hpp"
#include "s2fuse/rng.hpp"

namespace s2fuse::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(ParamList params, AdamConfig config = {});

  void step();
  void zero_grad();
  std::int64_t steps() const { return step_; }
  AdamConfig& config() { return config_; }

 private:
  ParamList params_;
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Exponential moving average of a parameter set: shadow <- d*shadow + (1-d)*live.
class Ema {
 public:
  /// The shadow starts as a copy of `live`, or at zero when `zero_start`.
  explicit Ema(const ParamList& live, double decay = 0.999, bool zero_start = false);

  void update(const ParamList& live);
  const std::vector<std::vector<double>>& shadow() const { return shadow_; }
  double decay() const { return decay_; }
  /// Copy the shadow values into `target` (same layout as the live set).
  void copy_to(const ParamList& target) const;
  /// For a zero-started shadow: copies shadow / (1 - decay^updates), which
  /// removes the pull toward zero over short runs.
  void copy_debiased_to(const ParamList& target) const;
  std::int64_t updates() const { return updates_; }

 private:
  double decay_;
  std::int64_t updates_ = 0;
  std::vector<std::vector<double>> shadow_;
};

// Checkpoints: a little-endian f32 blob at `path` and a text manifest at
// `path.manifest` with lines `name n,c,h,w offset` plus `meta key value`.
using CheckpointMeta = std::map<std::string, std::string>;

void save_checkpoint(const std::filesystem::path& path, const ParamList& params, const CheckpointMeta& meta = {});
/// Loads values into `params` by name; shapes must match. Returns the meta block.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, const ParamList& params);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int probes = 0;
};

/// Central-difference check of a scalar projection <R, f(params)> with a
/// fixed random R. `probes` random coordinates are drawn per parameter
/// tensor. Relative error = |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult gradcheck(const std::function<Var(Graph&)>& f, const ParamList& wrt, SeededRng& rng,
                          int probes = 5, double h = 1e-4);

}  // namespace s2fuse::nn
