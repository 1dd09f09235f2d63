#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2fuse/raster.hpp"

namespace s2fuse {

enum class SceneContent { Gradients, Blobs, Rectangles, Checkerboard, Mixture };

SceneContent parse_scene_content(const std::string& text);
std::string to_string(SceneContent content);

/// Number of shared latent structures behind a mixture scene: a smooth
/// gradient field, gaussian blobs, sharp-edged rectangles, fine texture.
inline constexpr int kSceneLatents = 4;

struct SceneSpec {
  int height = 64;
  int width = 64;
  int bands = 3;
  SceneContent content = SceneContent::Mixture;
  std::uint64_t seed = 0;
  /// bands x kSceneLatents row-major mixing weights; drawn from the seed
  /// when empty.
  std::vector<double> mixing;
  /// Std of the independent per-band texture (0-255 scale).
  double texture_sigma = 2.0;

  void validate() const;
};

/// The latent fields (kSceneLatents x H x W, each within [0, 1]).
Raster scene_latents(const SceneSpec& spec);

/// Mixing matrix actually used for `spec` (explicit or seed-drawn).
std::vector<double> scene_mixing(const SceneSpec& spec);

/// Per-band offsets of a mixture scene.
std::vector<double> scene_offsets(const SceneSpec& spec);

/// Synthetic multi-band scene on the 0-255 scale. For Mixture content
/// band b = offset_b + sum_k M[b][k] L_k + independent texture, clamped to
/// [0, 255]. Checkerboard uses exactly two levels (64 and 192).
Raster gen_scene(const SceneSpec& spec);

}  // namespace s2fuse
