#pragma once

#include <string>
#include <vector>

#include "s2fuse/nn/graph.hpp"
#include "s2fuse/raster.hpp"
#include "s2fuse/rng.hpp"

namespace s2fuse::nn {

/// Leaky-ReLU slope used by every network in the toolkit.
inline constexpr double kLeakySlope = 0.2;
/// Residual scaling inside and around RRDB blocks.
inline constexpr double kResidualScale = 0.2;

/// Fan-in scaled uniform init for leaky-ReLU networks:
/// U(-b, b), b = gain * sqrt(6 / ((1 + slope^2) * fan_in)).
void init_uniform_fan_in(ParamTensor& w, int fan_in, SeededRng& rng, double gain = 1.0);

struct Conv2d {
  ParamTensor weight;  // (Cout, Cin, K, K)
  ParamTensor bias;    // (1, Cout, 1, 1)

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int k);

  int in_channels() const { return weight.shape.c; }
  int out_channels() const { return weight.shape.n; }

  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng, double gain = 1.0);
  void zero();
  void collect(ParamList& out);
};

struct Dense {
  ParamTensor weight;  // (Dout, Din, 1, 1)
  ParamTensor bias;    // (1, Dout, 1, 1)

  Dense() = default;
  Dense(const std::string& name, int din, int dout);

  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng, double gain = 1.0);
  void zero();
  void collect(ParamList& out);
};

/// Dense block with growth `growth`: three convolutions where each sees the
/// concatenation of the block input and all earlier outputs.
struct DenseBlock {
  Conv2d c1, c2, c3;

  DenseBlock() = default;
  DenseBlock(const std::string& name, int channels, int growth);

  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng, double gain);
  void collect(ParamList& out);
};

/// Residual-in-residual dense block:
///   y = x + 0.2 * (D3(D2(D1(x))) - x),  D_k(z) = z + 0.2 * dense_k(z).
struct Rrdb {
  DenseBlock d1, d2, d3;

  Rrdb() = default;
  Rrdb(const std::string& name, int channels, int growth);

  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// conv - lrelu - conv with identity skip.
struct ResBlock {
  Conv2d a, b;

  ResBlock() = default;
  ResBlock(const std::string& name, int channels);

  Var operator()(Graph& g, Var x);
  void init(SeededRng& rng);
  void collect(ParamList& out);
};

/// Stack equally shaped rasters as a batch leaf (N x C x H x W).
Var raster_batch(Graph& g, const std::vector<const Raster*>& items, bool requires_grad = false);
Var raster_input(Graph& g, const Raster& item, bool requires_grad = false);
/// Sample `index` of a batch as a raster; metadata copied from `like` when given.
Raster to_raster(Var x, int index = 0, const Raster* like = nullptr);

std::size_t count_parameters(const ParamList& params);
void zero_grads(const ParamList& params);

}  // namespace s2fuse::nn
