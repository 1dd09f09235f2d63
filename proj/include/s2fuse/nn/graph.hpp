#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace s2fuse::nn {

/// NCHW shape. Vectors are N x D x 1 x 1, scalars 1 x 1 x 1 x 1.
/// Convolution weights use (Cout, Cin, K, K) in the same slots.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Learnable tensor living outside any graph; graphs accumulate into `grad`.
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = true;

  ParamTensor() = default;
  ParamTensor(std::string name, Shape shape);
  void zero_grad();
};

using ParamList = std::vector<ParamTensor*>;

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Shape& shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  double item() const;
};

/// Reverse-mode tape. Every op appends a node holding its value plus a
/// closure that pushes the node's gradient into its parents.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf holding data; `requires_grad` makes its gradient readable.
  Var input(Shape shape, std::vector<double> values, bool requires_grad = false);
  Var constant(Shape shape, double fill);
  /// Leaf bound to a parameter; backward() accumulates into p.grad.
  Var param(ParamTensor& p);

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(Var loss);

  const Shape& shape(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }
  std::span<const double> value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::span<const double> grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first use.
  std::vector<double>& grad_buffer(int id);

  using Backward = std::function<void(Graph&, int self)>;
  Var add_node(Shape shape, std::vector<double> value, std::initializer_list<Var> parents, Backward backward);
  Var add_node(Shape shape, std::vector<double> value, const std::vector<Var>& parents, Backward backward);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward backward;
    ParamTensor* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// ---- operations --------------------------------------------------------
// All ops require operands from the same graph and throw DimensionError on
// shape mismatch.

/// Stride-1 "same" convolution with zero padding; w is (Cout, Cin, K, K),
/// bias (1, Cout, 1, 1) or an invalid Var for none.
Var conv2d(Var x, Var w, Var bias);
/// Dense layer on N x D x 1 x 1 inputs; w is (Dout, D, 1, 1).
Var dense(Var x, Var w, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var leaky_relu(Var x, double slope = 0.2);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(Var x, int start, int count);
Var slice_batch(Var x, int start, int count);
Var concat_batch(const std::vector<Var>& parts);
Var reshape(Var x, Shape shape);

/// Mean over channels: N x C x H x W -> N x 1 x H x W.
Var channel_mean(Var x);
/// Mean over pixels: N x C x H x W -> N x C x 1 x 1.
Var global_avg_pool(Var x);
/// Softmax across channels at every (n, y, x).
Var softmax(Var x);

/// x * m with m of shape (N or 1) x C x 1 x 1 broadcast over pixels.
Var mul_channel(Var x, Var m);
/// x + b with b of shape (N or 1) x C x 1 x 1 broadcast over pixels.
Var add_channel(Var x, Var b);
/// sum_c w_c x_c with w of shape 1 x C x 1 x 1: N x C x H x W -> N x 1 x H x W.
Var weighted_channel_sum(Var x, Var w);
/// N x 1 x H x W -> N x k x H x W.
Var repeat_channels(Var x, int k);
/// N x C x H x W -> (N k) x C x H x W, each sample repeated k times in a row.
Var tile_batch(Var x, int k);

/// Space-to-depth and its inverse on every sample (same layout as the
/// raster-level pixel_fold).
Var pixel_fold(Var x, int r);
Var pixel_unfold(Var x, int r);

/// GLP low-pass of a single-channel map, one output channel per sigma:
/// bicubic_up(boxcar_down(gauss_sigma(p), r), r). Fixed linear operator.
Var glp_lowpass(Var p, const std::vector<double>& sigmas, int ratio);

Var sum_all(Var x);
Var mean_all(Var x);

/// Mean absolute difference; subgradient 0 at ties.
Var l1_loss(Var pred, Var target);

/// -log(exp(s+/tau) / (exp(s+/tau) + sum_j exp(s_j/tau))) with cosine
/// similarities. query/positive are 1 x D, negatives M x D (M may be 0).
Var infonce(Var query, Var positive, Var negatives, double tau);

}  // namespace s2fuse::nn
