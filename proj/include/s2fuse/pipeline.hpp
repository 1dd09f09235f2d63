#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2fuse/config.hpp"
#include "s2fuse/metrics.hpp"
#include "s2fuse/raster.hpp"

namespace s2fuse {

// Stages run in this order; a config lists any subsequence of them.
//   degrade  : ms, guide      -> ms_lr (Wald reduction), guide_lr (sensor degradation)
//   sr_guide : guide_lr       -> guide_sr (bicubic or toy diffusion)
//   fuse     : ms_lr, guide_sr (or guide) -> fused
//   eval     : ms, fused      -> report.txt (ms_lr adds reflectance consistency)
// A stage input that no earlier stage produces is read from `input.<name>`.
struct PipelineConfig {
  std::vector<std::string> stages;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;

  std::map<std::string, std::filesystem::path> inputs;  // artifact name -> raw path

  // Synthetic scene in place of input.ms / input.guide.
  bool synthetic = false;
  int scene_size = 96;
  int scene_ms_bands = 4;
  std::uint64_t scene_seed = 0;

  int ratio = 4;
  bool mtf_blur = true;
  int guide_scale = 1;
  std::string guide_blur = "none";  // none | train | validation | fixed:<sigma>
  double guide_noise = 0.0;
  bool harmonize = false;
  std::filesystem::path gamma_file;

  std::string sr_method = "bicubic";  // bicubic | toy
  std::filesystem::path sr_checkpoint;

  std::string fuse_method = "glpnn";  // glpnn | gs | ihs | pca | glp | bicubic
  std::filesystem::path fuse_checkpoint;
  std::optional<double> gnyq;

  double peak = 255.0;
  bool png = false;

  /// Rejects unknown keys and bad values; checks that every referenced
  /// input file exists. Nothing is executed.
  static PipelineConfig from_config(const Config& cfg);
};

struct PipelineResult {
  std::vector<std::filesystem::path> written;
  std::optional<MetricsReport> report;
};

/// Runs the stages in order. A failing stage rethrows its error with the
/// stage name prefixed; earlier outputs stay on disk.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace s2fuse
