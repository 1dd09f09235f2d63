#include "s2fuse/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "s2fuse/errors.hpp"

namespace s2fuse::nn {

void init_uniform_fan_in(ParamTensor& w, int fan_in, SeededRng& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
  for (double& v : w.value) v = rng.uniform(-bound, bound);
}

Conv2d::Conv2d(const std::string& name, int cin, int cout, int k)
    : weight(name + ".weight", Shape{cout, cin, k, k}), bias(name + ".bias", Shape{1, cout, 1, 1}) {}

Var Conv2d::operator()(Graph& g, Var x) { return conv2d(x, g.param(weight), g.param(bias)); }

void Conv2d::init(SeededRng& rng, double gain) {
  init_uniform_fan_in(weight, weight.shape.c * weight.shape.h * weight.shape.w, rng, gain);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::zero() {
  std::fill(weight.value.begin(), weight.value.end(), 0.0);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Dense::Dense(const std::string& name, int din, int dout)
    : weight(name + ".weight", Shape{dout, din, 1, 1}), bias(name + ".bias", Shape{1, dout, 1, 1}) {}

Var Dense::operator()(Graph& g, Var x) { return dense(x, g.param(weight), g.param(bias)); }

void Dense::init(SeededRng& rng, double gain) {
  init_uniform_fan_in(weight, weight.shape.c, rng, gain);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Dense::zero() {
  std::fill(weight.value.begin(), weight.value.end(), 0.0);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Dense::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

DenseBlock::DenseBlock(const std::string& name, int channels, int growth)
    : c1(name + ".c1", channels, growth, 3),
      c2(name + ".c2", channels + growth, growth, 3),
      c3(name + ".c3", channels + 2 * growth, channels, 3) {}

Var DenseBlock::operator()(Graph& g, Var x) {
  Var a = leaky_relu(c1(g, x), kLeakySlope);
  Var b = leaky_relu(c2(g, concat_channels({x, a})), kLeakySlope);
  Var c = c3(g, concat_channels({x, a, b}));
  return add(x, scale(c, kResidualScale));
}

void DenseBlock::init(SeededRng& rng, double gain) {
  c1.init(rng, gain);
  c2.init(rng, gain);
  c3.init(rng, gain);
}

void DenseBlock::collect(ParamList& out) {
  c1.collect(out);
  c2.collect(out);
  c3.collect(out);
}

Rrdb::Rrdb(const std::string& name, int channels, int growth)
    : d1(name + ".d1", channels, growth), d2(name + ".d2", channels, growth), d3(name + ".d3", channels, growth) {}

Var Rrdb::operator()(Graph& g, Var x) {
  Var y = d3(g, d2(g, d1(g, x)));
  return add(x, scale(sub(y, x), kResidualScale));
}

void Rrdb::init(SeededRng& rng) {
  // Small residual branches keep deep stacks near identity at start.
  d1.init(rng, 0.1);
  d2.init(rng, 0.1);
  d3.init(rng, 0.1);
}

void Rrdb::collect(ParamList& out) {
  d1.collect(out);
  d2.collect(out);
  d3.collect(out);
}

ResBlock::ResBlock(const std::string& name, int channels)
    : a(name + ".a", channels, channels, 3), b(name + ".b", channels, channels, 3) {}

Var ResBlock::operator()(Graph& g, Var x) { return add(x, b(g, leaky_relu(a(g, x), kLeakySlope))); }

void ResBlock::init(SeededRng& rng) {
  a.init(rng);
  b.init(rng, 0.1);
}

void ResBlock::collect(ParamList& out) {
  a.collect(out);
  b.collect(out);
}

Var raster_batch(Graph& g, const std::vector<const Raster*>& items, bool requires_grad) {
  if (items.empty()) throw DimensionError("empty raster batch");
  const Raster& first = *items.front();
  std::vector<double> values;
  values.reserve(first.size() * items.size());
  for (const Raster* r : items) {
    if (!r->same_shape(first)) throw DimensionError("raster batch members differ in shape");
    values.insert(values.end(), r->data().begin(), r->data().end());
  }
  return g.input(Shape{static_cast<int>(items.size()), first.bands(), first.height(), first.width()}, std::move(values),
                 requires_grad);
}

Var raster_input(Graph& g, const Raster& item, bool requires_grad) { return raster_batch(g, {&item}, requires_grad); }

Raster to_raster(Var x, int index, const Raster* like) {
  const Shape& s = x.shape();
  if (index < 0 || index >= s.n) throw DimensionError("batch index out of range");
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  auto v = x.value().subspan(static_cast<std::size_t>(index) * per, per);
  Raster out(s.c, s.h, s.w, std::vector<double>(v.begin(), v.end()));
  if (like != nullptr && like->bands() == s.c) out.meta() = like->meta();
  return out;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const ParamTensor* p : params) n += p->value.size();
  return n;
}

void zero_grads(const ParamList& params) {
  for (ParamTensor* p : params) p->zero_grad();
}

}  // namespace s2fuse::nn
