#include "s2fuse/nn/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "s2fuse/degradation.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/resample.hpp"

namespace s2fuse::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using MapRS = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CMapRS = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

Graph& same_graph(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.graph != b.graph) throw DimensionError("operands belong to different graphs");
  return *a.graph;
}

void require_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Accumulate `src` into the gradient of `target` if it wants one.
void accumulate(Graph& g, int target, std::span<const double> src) {
  if (!g.needs_grad(target)) return;
  auto& dst = g.grad_buffer(target);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// im2col for output rows [y0, y1) of one sample: rows are (cin, ky, kx),
// columns are the pixels of that row band.
void im2col(const double* x, int cin, int h, int w, int k, int y0, int y1, double* col) {
  const int half = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t band = static_cast<std::size_t>(y1 - y0) * w;
  for (int c = 0; c < cin; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ky) * k + kx) * band;
        const int oy = ky - half;
        const int ox = kx - half;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + oy;
          double* dst = row + static_cast<std::size_t>(y - y0) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          // Valid output columns are [x0, x1); the rest read zero padding.
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          std::fill(dst, dst + x0, 0.0);
          std::copy(src + x0 + ox, src + x1 + ox, dst + x0);
          std::fill(dst + x1, dst + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, int cin, int h, int w, int k, int y0, int y1, double* x) {
  const int half = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t band = static_cast<std::size_t>(y1 - y0) * w;
  for (int c = 0; c < cin; ++c) {
    double* plane = x + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ky) * k + kx) * band;
        const int oy = ky - half;
        const int ox = kx - half;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<std::size_t>(y - y0) * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int x = x0; x < x1; ++x) dst[x + ox] += src[x];
        }
      }
    }
  }
}

// Rows per im2col band so the column buffer stays near 4096 pixels.
int band_rows(int h, int w) { return std::clamp(4096 / std::max(w, 1), 1, h); }

}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

ParamTensor::ParamTensor(std::string name_, Shape shape_)
    : name(std::move(name_)), shape(shape_), value(shape_.size(), 0.0), grad(shape_.size(), 0.0) {}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

const Shape& Var::shape() const { return graph->shape(id); }
std::span<const double> Var::value() const { return graph->value(id); }
std::span<const double> Var::grad() const { return graph->grad(id); }
double Var::item() const {
  if (shape().size() != 1) throw DimensionError("item() on a non-scalar");
  return value()[0];
}

std::vector<double>& Graph::grad_buffer(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Var Graph::input(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.size()) throw DimensionError("input value count does not match shape " + shape.str());
  Node node;
  node.shape = shape;
  node.value = std::move(values);
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Shape shape, double fill) { return input(shape, std::vector<double>(shape.size(), fill)); }

Var Graph::param(ParamTensor& p) {
  Var v = input(p.shape, p.value, p.requires_grad);
  nodes_.back().param = &p;
  return v;
}

Var Graph::add_node(Shape shape, std::vector<double> value, std::initializer_list<Var> parents, Backward backward) {
  return add_node(shape, std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Graph::add_node(Shape shape, std::vector<double> value, const std::vector<Var>& parents, Backward backward) {
  Node node;
  node.shape = shape;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (!p.valid()) continue;
    if (p.graph != this) throw DimensionError("operand belongs to a different graph");
    node.needs_grad = node.needs_grad || needs_grad(p.id);
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw DimensionError("loss belongs to a different graph");
  if (shape(loss.id).size() != 1) throw DimensionError("backward() needs a scalar loss");
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  if (!needs_grad(loss.id)) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, id);
    if (node.param != nullptr) {
      auto& pg = node.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad[i];
    }
  }
}

// ---- convolution / dense ----------------------------------------------

Var conv2d(Var x, Var w, Var bias) {
  Graph& g = same_graph(x, w);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.c != xs.c || ws.h != ws.w || ws.h % 2 == 0)
    throw DimensionError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  if (bias.valid() && !(bias.shape() == Shape{1, ws.n, 1, 1}))
    throw DimensionError("conv2d: bias shape " + bias.shape().str());
  const int cin = xs.c, cout = ws.n, k = ws.h;
  const std::size_t hw = xs.plane();
  const std::size_t kk = static_cast<std::size_t>(cin) * k * k;
  Shape os{xs.n, cout, xs.h, xs.w};
  std::vector<double> out(os.size());
  CMapR wm(w.value().data(), cout, static_cast<Eigen::Index>(kk));
  const int rows = band_rows(xs.h, xs.w);
  std::vector<double> col(k == 1 ? 0 : kk * static_cast<std::size_t>(rows) * xs.w);
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.value().data() + static_cast<std::size_t>(n) * cin * hw;
    double* on = out.data() + static_cast<std::size_t>(n) * cout * hw;
    if (k == 1) {
      MapR om(on, cout, static_cast<Eigen::Index>(hw));
      om.noalias() = wm * CMapR(xn, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
    } else {
      for (int y0 = 0; y0 < xs.h; y0 += rows) {
        const int y1 = std::min(xs.h, y0 + rows);
        const auto cols = static_cast<Eigen::Index>(y1 - y0) * xs.w;
        im2col(xn, cin, xs.h, xs.w, k, y0, y1, col.data());
        MapRS om(on + static_cast<std::size_t>(y0) * xs.w, cout, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
        om.noalias() = wm * CMapR(col.data(), static_cast<Eigen::Index>(kk), cols);
      }
    }
    if (bias.valid()) {
      MapR om(on, cout, static_cast<Eigen::Index>(hw));
      auto bv = bias.value();
      for (int o = 0; o < cout; ++o) om.row(o).array() += bv[static_cast<std::size_t>(o)];
    }
  }
  const int xid = x.id, wid = w.id, bid = bias.valid() ? bias.id : -1;
  return g.add_node(os, std::move(out), {x, w, bias}, [=](Graph& gr, int self) {
    auto gout = gr.grad(self);
    auto xv = gr.value(xid);
    CMapR wmat(gr.value(wid).data(), cout, static_cast<Eigen::Index>(kk));
    const bool need_x = gr.needs_grad(xid);
    const bool need_w = gr.needs_grad(wid);
    const std::size_t band_cap = kk * static_cast<std::size_t>(rows) * xs.w;
    std::vector<double> colb(k != 1 && need_w ? band_cap : 0);
    std::vector<double> dcol(k != 1 && need_x ? band_cap : 0);
    for (int n = 0; n < xs.n; ++n) {
      const double* gon = gout.data() + static_cast<std::size_t>(n) * cout * hw;
      const double* xn = xv.data() + static_cast<std::size_t>(n) * cin * hw;
      double* gx = need_x ? gr.grad_buffer(xid).data() + static_cast<std::size_t>(n) * cin * hw : nullptr;
      if (k == 1) {
        CMapR go(gon, cout, static_cast<Eigen::Index>(hw));
        if (need_w) {
          MapR gw(gr.grad_buffer(wid).data(), cout, static_cast<Eigen::Index>(kk));
          gw.noalias() += go * CMapR(xn, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw)).transpose();
        }
        if (need_x) {
          MapR gxm(gx, cin, static_cast<Eigen::Index>(hw));
          gxm.noalias() += wmat.transpose() * go;
        }
      } else {
        for (int y0 = 0; y0 < xs.h; y0 += rows) {
          const int y1 = std::min(xs.h, y0 + rows);
          const auto cols = static_cast<Eigen::Index>(y1 - y0) * xs.w;
          CMapRS go(gon + static_cast<std::size_t>(y0) * xs.w, cout, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
          if (need_w) {
            im2col(xn, cin, xs.h, xs.w, k, y0, y1, colb.data());
            MapR gw(gr.grad_buffer(wid).data(), cout, static_cast<Eigen::Index>(kk));
            gw.noalias() += go * CMapR(colb.data(), static_cast<Eigen::Index>(kk), cols).transpose();
          }
          if (need_x) {
            MapR dc(dcol.data(), static_cast<Eigen::Index>(kk), cols);
            dc.noalias() = wmat.transpose() * go;
            col2im_add(dcol.data(), cin, xs.h, xs.w, k, y0, y1, gx);
          }
        }
      }
      if (bid >= 0 && gr.needs_grad(bid)) {
        CMapR go(gon, cout, static_cast<Eigen::Index>(hw));
        auto& gb = gr.grad_buffer(bid);
        for (int o = 0; o < cout; ++o) gb[static_cast<std::size_t>(o)] += go.row(o).sum();
      }
    }
  });
}

Var dense(Var x, Var w, Var bias) {
  Graph& g = same_graph(x, w);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int din = xs.c * xs.h * xs.w;
  if (ws.c != din || ws.h != 1 || ws.w != 1)
    throw DimensionError("dense: weight " + ws.str() + " incompatible with input " + xs.str());
  if (bias.valid() && !(bias.shape() == Shape{1, ws.n, 1, 1}))
    throw DimensionError("dense: bias shape " + bias.shape().str());
  const int dout = ws.n;
  Shape os{xs.n, dout, 1, 1};
  std::vector<double> out(os.size());
  CMapR xm(x.value().data(), xs.n, din);
  CMapR wm(w.value().data(), dout, din);
  MapR om(out.data(), xs.n, dout);
  om.noalias() = xm * wm.transpose();
  if (bias.valid()) {
    auto bv = bias.value();
    for (int n = 0; n < xs.n; ++n)
      for (int o = 0; o < dout; ++o) om(n, o) += bv[static_cast<std::size_t>(o)];
  }
  const int xid = x.id, wid = w.id, bid = bias.valid() ? bias.id : -1;
  return g.add_node(os, std::move(out), {x, w, bias}, [=](Graph& gr, int self) {
    CMapR go(gr.grad(self).data(), xs.n, dout);
    if (gr.needs_grad(xid)) {
      MapR gx(gr.grad_buffer(xid).data(), xs.n, din);
      gx.noalias() += go * CMapR(gr.value(wid).data(), dout, din);
    }
    if (gr.needs_grad(wid)) {
      MapR gw(gr.grad_buffer(wid).data(), dout, din);
      gw.noalias() += go.transpose() * CMapR(gr.value(xid).data(), xs.n, din);
    }
    if (bid >= 0 && gr.needs_grad(bid)) {
      auto& gb = gr.grad_buffer(bid);
      for (int o = 0; o < dout; ++o) gb[static_cast<std::size_t>(o)] += go.col(o).sum();
    }
  });
}

// ---- elementwise ---------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_shape(a.shape(), b.shape(), "add");
  std::vector<double> out(a.value().begin(), a.value().end());
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int aid = a.id, bid = b.id;
  return g.add_node(a.shape(), std::move(out), {a, b}, [=](Graph& gr, int self) {
    accumulate(gr, aid, gr.grad(self));
    accumulate(gr, bid, gr.grad(self));
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_shape(a.shape(), b.shape(), "sub");
  std::vector<double> out(a.value().begin(), a.value().end());
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int aid = a.id, bid = b.id;
  return g.add_node(a.shape(), std::move(out), {a, b}, [=](Graph& gr, int self) {
    accumulate(gr, aid, gr.grad(self));
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad_buffer(bid);
      auto go = gr.grad(self);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_shape(a.shape(), b.shape(), "mul");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int aid = a.id, bid = b.id;
  return g.add_node(a.shape(), std::move(out), {a, b}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    if (gr.needs_grad(aid)) {
      auto& ga = gr.grad_buffer(aid);
      auto bvv = gr.value(bid);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bvv[i];
    }
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad_buffer(bid);
      auto avv = gr.value(aid);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * avv[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph;
  std::vector<double> out(a.value().begin(), a.value().end());
  for (double& v : out) v *= s;
  const int aid = a.id;
  return g.add_node(a.shape(), std::move(out), {a}, [=](Graph& gr, int self) {
    auto& ga = gr.grad_buffer(aid);
    auto go = gr.grad(self);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = *a.graph;
  std::vector<double> out(a.value().begin(), a.value().end());
  for (double& v : out) v += s;
  const int aid = a.id;
  return g.add_node(a.shape(), std::move(out), {a},
                    [=](Graph& gr, int self) { accumulate(gr, aid, gr.grad(self)); });
}

Var leaky_relu(Var x, double slope) {
  Graph& g = *x.graph;
  std::vector<double> out(x.value().begin(), x.value().end());
  for (double& v : out)
    if (v < 0.0) v *= slope;
  const int xid = x.id;
  return g.add_node(x.shape(), std::move(out), {x}, [=](Graph& gr, int self) {
    auto& gx = gr.grad_buffer(xid);
    auto xv = gr.value(xid);
    auto go = gr.grad(self);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += xv[i] < 0.0 ? slope * go[i] : go[i];
  });
}

// ---- layout ----------------------------------------------------------------

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels of nothing");
  Graph& g = *parts[0].graph;
  const Shape s0 = parts[0].shape();
  int total = 0;
  for (const Var& p : parts) {
    if (p.graph != &g) throw DimensionError("concat_channels: mixed graphs");
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw DimensionError("concat_channels: " + s.str() + " vs " + s0.str());
    total += s.c;
  }
  Shape os{s0.n, total, s0.h, s0.w};
  const std::size_t hw = s0.plane();
  std::vector<double> out(os.size());
  std::vector<int> ids, chans;
  int offset = 0;
  for (const Var& p : parts) {
    const int c = p.shape().c;
    auto v = p.value();
    for (int n = 0; n < s0.n; ++n)
      std::copy_n(v.data() + static_cast<std::size_t>(n) * c * hw, static_cast<std::size_t>(c) * hw,
                  out.data() + (static_cast<std::size_t>(n) * total + offset) * hw);
    ids.push_back(p.id);
    chans.push_back(c);
    offset += c;
  }
  return g.add_node(os, std::move(out), parts, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    int off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int c = chans[k];
      if (gr.needs_grad(ids[k])) {
        auto& gp = gr.grad_buffer(ids[k]);
        for (int n = 0; n < s0.n; ++n) {
          const double* src = go.data() + (static_cast<std::size_t>(n) * total + off) * hw;
          double* dst = gp.data() + static_cast<std::size_t>(n) * c * hw;
          for (std::size_t i = 0; i < static_cast<std::size_t>(c) * hw; ++i) dst[i] += src[i];
        }
      }
      off += c;
    }
  });
}

Var slice_channels(Var x, int start, int count) {
  Graph& g = *x.graph;
  const Shape s = x.shape();
  if (start < 0 || count < 1 || start + count > s.c) throw DimensionError("slice_channels out of range");
  Shape os{s.n, count, s.h, s.w};
  const std::size_t hw = s.plane();
  std::vector<double> out(os.size());
  auto v = x.value();
  for (int n = 0; n < s.n; ++n)
    std::copy_n(v.data() + (static_cast<std::size_t>(n) * s.c + start) * hw, static_cast<std::size_t>(count) * hw,
                out.data() + static_cast<std::size_t>(n) * count * hw);
  const int xid = x.id;
  return g.add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (int n = 0; n < s.n; ++n) {
      const double* src = go.data() + static_cast<std::size_t>(n) * count * hw;
      double* dst = gx.data() + (static_cast<std::size_t>(n) * s.c + start) * hw;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * hw; ++i) dst[i] += src[i];
    }
  });
}

Var slice_batch(Var x, int start, int count) {
  Graph& g = *x.graph;
  const Shape s = x.shape();
  if (start < 0 || count < 1 || start + count > s.n) throw DimensionError("slice_batch out of range");
  Shape os{count, s.c, s.h, s.w};
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  std::vector<double> out(x.value().begin() + static_cast<std::ptrdiff_t>(start * per),
                          x.value().begin() + static_cast<std::ptrdiff_t>((start + count) * per));
  const int xid = x.id;
  return g.add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (std::size_t i = 0; i < go.size(); ++i) gx[start * per + i] += go[i];
  });
}

Var concat_batch(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_batch of nothing");
  Graph& g = *parts[0].graph;
  const Shape s0 = parts[0].shape();
  int total = 0;
  std::vector<double> out;
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const Shape s = p.shape();
    if (p.graph != &g || s.c != s0.c || s.h != s0.h || s.w != s0.w)
      throw DimensionError("concat_batch: " + s.str() + " vs " + s0.str());
    total += s.n;
    out.insert(out.end(), p.value().begin(), p.value().end());
    ids.push_back(p.id);
    sizes.push_back(s.size());
  }
  return g.add_node(Shape{total, s0.c, s0.h, s0.w}, std::move(out), parts, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      accumulate(gr, ids[k], go.subspan(off, sizes[k]));
      off += sizes[k];
    }
  });
}

Var reshape(Var x, Shape shape) {
  if (shape.size() != x.shape().size())
    throw DimensionError("reshape " + x.shape().str() + " -> " + shape.str() + " changes size");
  const int xid = x.id;
  return x.graph->add_node(shape, std::vector<double>(x.value().begin(), x.value().end()), {x},
                           [=](Graph& gr, int self) { accumulate(gr, xid, gr.grad(self)); });
}

// ---- reductions / broadcasts ---------------------------------------------

Var channel_mean(Var x) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  Shape os{s.n, 1, s.h, s.w};
  std::vector<double> out(os.size(), 0.0);
  auto v = x.value();
  const double inv = 1.0 / s.c;
  for (int n = 0; n < s.n; ++n) {
    double* dst = out.data() + static_cast<std::size_t>(n) * hw;
    for (int c = 0; c < s.c; ++c) {
      const double* src = v.data() + (static_cast<std::size_t>(n) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < hw; ++i) dst[i] *= inv;
  }
  const int xid = x.id;
  return x.graph->add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          gx[(static_cast<std::size_t>(n) * s.c + c) * hw + i] += go[static_cast<std::size_t>(n) * hw + i] * inv;
  });
}

Var global_avg_pool(Var x) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  Shape os{s.n, s.c, 1, 1};
  std::vector<double> out(os.size());
  auto v = x.value();
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += v[nc * hw + i];
    out[nc] = acc / static_cast<double>(hw);
  }
  const int xid = x.id;
  return x.graph->add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (std::size_t nc = 0; nc < go.size(); ++nc)
      for (std::size_t i = 0; i < hw; ++i) gx[nc * hw + i] += go[nc] / static_cast<double>(hw);
  });
}

Var softmax(Var x) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  std::vector<double> out(s.size());
  auto v = x.value();
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      auto idx = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * hw + i; };
      double mx = v[idx(0)];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, v[idx(c)]);
      double total = 0.0;
      for (int c = 0; c < s.c; ++c) total += (out[idx(c)] = std::exp(v[idx(c)] - mx));
      for (int c = 0; c < s.c; ++c) out[idx(c)] /= total;
    }
  }
  const int xid = x.id;
  return x.graph->add_node(s, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto y = gr.value(self);
    auto& gx = gr.grad_buffer(xid);
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < hw; ++i) {
        auto idx = [&](int c) { return (static_cast<std::size_t>(n) * s.c + c) * hw + i; };
        double dot = 0.0;
        for (int c = 0; c < s.c; ++c) dot += go[idx(c)] * y[idx(c)];
        for (int c = 0; c < s.c; ++c) gx[idx(c)] += y[idx(c)] * (go[idx(c)] - dot);
      }
    }
  });
}

namespace {

void check_channel_operand(const Shape& xs, const Shape& ms, const char* op) {
  if (ms.c != xs.c || ms.h != 1 || ms.w != 1 || (ms.n != 1 && ms.n != xs.n))
    throw DimensionError(std::string(op) + ": operand " + ms.str() + " does not broadcast over " + xs.str());
}

}  // namespace

Var mul_channel(Var x, Var m) {
  Graph& g = same_graph(x, m);
  const Shape xs = x.shape();
  const Shape ms = m.shape();
  check_channel_operand(xs, ms, "mul_channel");
  const std::size_t hw = xs.plane();
  std::vector<double> out(xs.size());
  auto xv = x.value();
  auto mv = m.value();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const double f = mv[static_cast<std::size_t>(ms.n == 1 ? c : n * xs.c + c)];
      const std::size_t o = (static_cast<std::size_t>(n) * xs.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[o + i] = xv[o + i] * f;
    }
  const int xid = x.id, mid = m.id;
  return g.add_node(xs, std::move(out), {x, m}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto xvv = gr.value(xid);
    auto mvv = gr.value(mid);
    const bool nx = gr.needs_grad(xid), nm = gr.needs_grad(mid);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t mi = static_cast<std::size_t>(ms.n == 1 ? c : n * xs.c + c);
        const std::size_t o = (static_cast<std::size_t>(n) * xs.c + c) * hw;
        if (nx) {
          auto& gx = gr.grad_buffer(xid);
          for (std::size_t i = 0; i < hw; ++i) gx[o + i] += go[o + i] * mvv[mi];
        }
        if (nm) {
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += go[o + i] * xvv[o + i];
          gr.grad_buffer(mid)[mi] += acc;
        }
      }
  });
}

Var add_channel(Var x, Var b) {
  Graph& g = same_graph(x, b);
  const Shape xs = x.shape();
  const Shape bs = b.shape();
  check_channel_operand(xs, bs, "add_channel");
  const std::size_t hw = xs.plane();
  std::vector<double> out(x.value().begin(), x.value().end());
  auto bv = b.value();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const double f = bv[static_cast<std::size_t>(bs.n == 1 ? c : n * xs.c + c)];
      const std::size_t o = (static_cast<std::size_t>(n) * xs.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[o + i] += f;
    }
  const int xid = x.id, bid = b.id;
  return g.add_node(xs, std::move(out), {x, b}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    accumulate(gr, xid, go);
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad_buffer(bid);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const std::size_t o = (static_cast<std::size_t>(n) * xs.c + c) * hw;
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += go[o + i];
          gb[static_cast<std::size_t>(bs.n == 1 ? c : n * xs.c + c)] += acc;
        }
    }
  });
}

Var weighted_channel_sum(Var x, Var w) {
  Graph& g = same_graph(x, w);
  const Shape xs = x.shape();
  if (!(w.shape() == Shape{1, xs.c, 1, 1}))
    throw DimensionError("weighted_channel_sum: weights " + w.shape().str() + " for input " + xs.str());
  const std::size_t hw = xs.plane();
  Shape os{xs.n, 1, xs.h, xs.w};
  std::vector<double> out(os.size(), 0.0);
  auto xv = x.value();
  auto wv = w.value();
  for (int n = 0; n < xs.n; ++n) {
    double* dst = out.data() + static_cast<std::size_t>(n) * hw;
    for (int c = 0; c < xs.c; ++c) {
      const double* src = xv.data() + (static_cast<std::size_t>(n) * xs.c + c) * hw;
      const double wc = wv[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) dst[i] += wc * src[i];
    }
  }
  const int xid = x.id, wid = w.id;
  return g.add_node(os, std::move(out), {x, w}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto xvv = gr.value(xid);
    auto wvv = gr.value(wid);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t o = (static_cast<std::size_t>(n) * xs.c + c) * hw;
        const double* gn = go.data() + static_cast<std::size_t>(n) * hw;
        if (gr.needs_grad(xid)) {
          auto& gx = gr.grad_buffer(xid);
          for (std::size_t i = 0; i < hw; ++i) gx[o + i] += wvv[static_cast<std::size_t>(c)] * gn[i];
        }
        if (gr.needs_grad(wid)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += gn[i] * xvv[o + i];
          gr.grad_buffer(wid)[static_cast<std::size_t>(c)] += acc;
        }
      }
  });
}

Var repeat_channels(Var x, int k) {
  const Shape s = x.shape();
  if (s.c != 1 || k < 1) throw DimensionError("repeat_channels expects a single-channel input");
  const std::size_t hw = s.plane();
  Shape os{s.n, k, s.h, s.w};
  std::vector<double> out(os.size());
  auto v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < k; ++c)
      std::copy_n(v.data() + static_cast<std::size_t>(n) * hw, hw, out.data() + (static_cast<std::size_t>(n) * k + c) * hw);
  const int xid = x.id;
  return x.graph->add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < k; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          gx[static_cast<std::size_t>(n) * hw + i] += go[(static_cast<std::size_t>(n) * k + c) * hw + i];
  });
}

Var tile_batch(Var x, int k) {
  const Shape s = x.shape();
  if (k < 1) throw DimensionError("tile_batch factor must be >= 1");
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  Shape os{s.n * k, s.c, s.h, s.w};
  std::vector<double> out(os.size());
  auto v = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int r = 0; r < k; ++r)
      std::copy_n(v.data() + static_cast<std::size_t>(n) * per, per, out.data() + (static_cast<std::size_t>(n) * k + r) * per);
  const int xid = x.id;
  return x.graph->add_node(os, std::move(out), {x}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (int n = 0; n < s.n; ++n)
      for (int r = 0; r < k; ++r)
        for (std::size_t i = 0; i < per; ++i)
          gx[static_cast<std::size_t>(n) * per + i] += go[(static_cast<std::size_t>(n) * k + r) * per + i];
  });
}

namespace {

// Index map for fold: output flat index -> input flat index.
std::vector<std::size_t> fold_map(const Shape& in, int r) {
  const int oh = in.h / r, ow = in.w / r, oc = in.c * r * r;
  std::vector<std::size_t> map(in.size());
  std::size_t o = 0;
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < oc; ++c) {
      const int ic = c / (r * r);
      const int sub = c % (r * r);
      const int dy = sub / r, dx = sub % r;
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          map[o++] = ((static_cast<std::size_t>(n) * in.c + ic) * in.h + (y * r + dy)) * in.w + (x * r + dx);
    }
  return map;
}

Var permute(Var x, Shape os, std::vector<std::size_t> src_of_out) {
  auto v = x.value();
  std::vector<double> out(os.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[src_of_out[i]];
  const int xid = x.id;
  return x.graph->add_node(os, std::move(out), {x}, [xid, map = std::move(src_of_out)](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gx = gr.grad_buffer(xid);
    for (std::size_t i = 0; i < go.size(); ++i) gx[map[i]] += go[i];
  });
}

}  // namespace

Var pixel_fold(Var x, int r) {
  const Shape s = x.shape();
  if (r < 1 || s.h % r != 0 || s.w % r != 0) throw DimensionError("pixel_fold requires H and W divisible by r");
  return permute(x, Shape{s.n, s.c * r * r, s.h / r, s.w / r}, fold_map(s, r));
}

Var pixel_unfold(Var x, int r) {
  const Shape s = x.shape();
  if (r < 1 || s.c % (r * r) != 0) throw DimensionError("pixel_unfold requires C divisible by r^2");
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  // Invert the fold map of the output shape.
  const auto fm = fold_map(os, r);
  std::vector<std::size_t> src(os.size());
  for (std::size_t i = 0; i < fm.size(); ++i) src[fm[i]] = i;
  return permute(x, os, std::move(src));
}

Var glp_lowpass(Var p, const std::vector<double>& sigmas, int ratio) {
  const Shape s = p.shape();
  if (s.c != 1) throw DimensionError("glp_lowpass expects a single-channel input");
  if (ratio < 1 || s.h % ratio != 0 || s.w % ratio != 0)
    throw DimensionError("glp_lowpass: ratio must divide the spatial size");
  const int bands = static_cast<int>(sigmas.size());
  if (bands < 1) throw DimensionError("glp_lowpass needs at least one sigma");
  const int lh = s.h / ratio, lw = s.w / ratio;
  const AxisTaps rows = make_axis_taps(lh, s.h, Scale::up(ratio), Interp::Bicubic, Align::PixelCenter);
  const AxisTaps cols = make_axis_taps(lw, s.w, Scale::up(ratio), Interp::Bicubic, Align::PixelCenter);
  std::vector<Kernel2D> kernels;
  for (double sg : sigmas) {
    Kernel2D k = gaussian_kernel(sg);
    if (k.size > 2 * std::min(s.h, s.w) + 1) throw DimensionError("glp_lowpass: MTF kernel larger than the image");
    kernels.push_back(std::move(k));
  }
  const std::size_t hw = s.plane();
  const std::size_t lhw = static_cast<std::size_t>(lh) * lw;
  Shape os{s.n, bands, s.h, s.w};
  std::vector<double> out(os.size());
  std::vector<double> blurred(hw), low(lhw);
  auto v = p.value();
  for (int n = 0; n < s.n; ++n) {
    std::span<const double> plane(v.data() + static_cast<std::size_t>(n) * hw, hw);
    for (int b = 0; b < bands; ++b) {
      conv2d_reflect_plane(plane, s.h, s.w, kernels[static_cast<std::size_t>(b)], blurred);
      boxcar_plane(blurred, s.h, s.w, ratio, low);
      resample_plane(low, rows, cols,
                     std::span<double>(out.data() + (static_cast<std::size_t>(n) * bands + b) * hw, hw));
    }
  }
  const int pid = p.id;
  return p.graph->add_node(os, std::move(out), {p}, [=](Graph& gr, int self) {
    auto go = gr.grad(self);
    auto& gp = gr.grad_buffer(pid);
    std::vector<double> glow(lhw), gblur(hw);
    for (int n = 0; n < s.n; ++n) {
      std::span<double> dst(gp.data() + static_cast<std::size_t>(n) * hw, hw);
      for (int b = 0; b < bands; ++b) {
        std::fill(glow.begin(), glow.end(), 0.0);
        std::fill(gblur.begin(), gblur.end(), 0.0);
        resample_plane_adjoint(go.subspan((static_cast<std::size_t>(n) * bands + b) * hw, hw), rows, cols, glow);
        boxcar_plane_adjoint(glow, s.h, s.w, ratio, gblur);
        conv2d_reflect_plane_adjoint(gblur, s.h, s.w, kernels[static_cast<std::size_t>(b)], dst);
      }
    }
  });
}

Var sum_all(Var x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  const int xid = x.id;
  return x.graph->add_node(Shape{}, {acc}, {x}, [=](Graph& gr, int self) {
    const double g0 = gr.grad(self)[0];
    for (double& gv : gr.grad_buffer(xid)) gv += g0;
  });
}

Var mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.shape().size())); }

Var l1_loss(Var pred, Var target) {
  Graph& g = same_graph(pred, target);
  require_shape(pred.shape(), target.shape(), "l1_loss");
  auto pv = pred.value();
  auto tv = target.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
  const double inv = 1.0 / static_cast<double>(pv.size());
  const int pid = pred.id, tid = target.id;
  return g.add_node(Shape{}, {acc * inv}, {pred, target}, [=](Graph& gr, int self) {
    const double g0 = gr.grad(self)[0] * inv;
    auto pvv = gr.value(pid);
    auto tvv = gr.value(tid);
    auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
    if (gr.needs_grad(pid)) {
      auto& gp = gr.grad_buffer(pid);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g0 * sign(pvv[i] - tvv[i]);
    }
    if (gr.needs_grad(tid)) {
      auto& gt = gr.grad_buffer(tid);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g0 * sign(pvv[i] - tvv[i]);
    }
  });
}

Var infonce(Var query, Var positive, Var negatives, double tau) {
  Graph& g = same_graph(query, positive);
  if (!(tau > 0.0)) throw ParameterError("InfoNCE temperature must be positive");
  const int d = static_cast<int>(query.shape().size());
  if (query.shape().n != 1 || positive.shape().size() != static_cast<std::size_t>(d))
    throw DimensionError("infonce: query and positive must be single embeddings of equal width");
  const int m = negatives.valid() ? negatives.shape().n : 0;
  if (m > 0 && negatives.shape().size() != static_cast<std::size_t>(m) * d)
    throw DimensionError("infonce: negatives must be M x D");
  // Candidate 0 is the positive, 1..m the negatives.
  auto qv = query.value();
  std::vector<const double*> cand{positive.value().data()};
  for (int j = 0; j < m; ++j) cand.push_back(negatives.value().data() + static_cast<std::size_t>(j) * d);
  auto norm = [d](const double* a) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += a[i] * a[i];
    return std::sqrt(s);
  };
  const double qn = norm(qv.data());
  if (!(qn > 0.0)) throw DomainError("infonce: zero-norm query embedding");
  std::vector<double> cn(cand.size()), sims(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) {
    cn[j] = norm(cand[j]);
    if (!(cn[j] > 0.0)) throw DomainError("infonce: zero-norm candidate embedding");
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += qv[static_cast<std::size_t>(i)] * cand[j][i];
    sims[j] = dot / (qn * cn[j]);
  }
  double mx = sims[0] / tau;
  for (double s : sims) mx = std::max(mx, s / tau);
  double z = 0.0;
  std::vector<double> prob(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) z += (prob[j] = std::exp(sims[j] / tau - mx));
  for (double& pj : prob) pj /= z;
  const double loss = -(sims[0] / tau - mx - std::log(z));

  const int qid = query.id, pid = positive.id, nid = negatives.valid() ? negatives.id : -1;
  return g.add_node(Shape{}, {loss}, {query, positive, negatives}, [=](Graph& gr, int self) {
    const double g0 = gr.grad(self)[0];
    auto q = gr.value(qid);
    std::vector<const double*> cs{gr.value(pid).data()};
    for (int j = 0; j < m; ++j) cs.push_back(gr.value(nid).data() + static_cast<std::size_t>(j) * d);
    // dL/dsim_j = (p_j - [j == 0]) / tau
    std::vector<double> gq(static_cast<std::size_t>(d), 0.0);
    for (std::size_t j = 0; j < cs.size(); ++j) {
      const double dl = g0 * (prob[j] - (j == 0 ? 1.0 : 0.0)) / tau;
      // d cos(q, c) / dq = c/(|q||c|) - cos * q/|q|^2, symmetric for c.
      std::vector<double>* gc = nullptr;
      const int cid = j == 0 ? pid : nid;
      if (gr.needs_grad(cid)) gc = &gr.grad_buffer(cid);
      const std::size_t coff = j == 0 ? 0 : (j - 1) * static_cast<std::size_t>(d);
      for (int i = 0; i < d; ++i) {
        const double qi = q[static_cast<std::size_t>(i)];
        const double ci = cs[j][i];
        gq[static_cast<std::size_t>(i)] += dl * (ci / (qn * cn[j]) - sims[j] * qi / (qn * qn));
        if (gc) (*gc)[coff + static_cast<std::size_t>(i)] += dl * (qi / (qn * cn[j]) - sims[j] * ci / (cn[j] * cn[j]));
      }
    }
    if (gr.needs_grad(qid)) {
      auto& gqb = gr.grad_buffer(qid);
      for (int i = 0; i < d; ++i) gqb[static_cast<std::size_t>(i)] += gq[static_cast<std::size_t>(i)];
    }
  });
}

}  // namespace s2fuse::nn
