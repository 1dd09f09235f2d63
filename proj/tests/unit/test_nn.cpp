#include <doctest.h>

#include <numbers>

#include "common.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/nn/graph.hpp"
#include "s2fuse/nn/layers.hpp"
#include "s2fuse/nn/optim.hpp"

using namespace s2fuse;
using namespace s2fuse::nn;

namespace {

std::vector<double> normals(SeededRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("leaky relu value and slope") {
    Graph g;
    Var x = g.input({1, 1, 1, 2}, {-1.0, 2.0}, true);
    Var y = leaky_relu(x, 0.2);
    CHECK(y.value()[0] == doctest::Approx(-0.2));
    CHECK(y.value()[1] == 2.0);
    g.backward(sum_all(y));
    CHECK(x.grad()[0] == doctest::Approx(0.2));
    CHECK(x.grad()[1] == 1.0);
  }

  TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    Var y = softmax(g.input({1, 3, 1, 1}, {0.7, 0.7, 0.7}));
    for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("shape mismatches are dimension errors") {
    Graph g;
    Var a = g.input({1, 2, 3, 3}, std::vector<double>(18));
    Var b = g.input({1, 2, 3, 4}, std::vector<double>(24));
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(l1_loss(a, b), DimensionError);
  }

  TEST_CASE("conv2d against a direct zero-padded loop") {
    SeededRng rng(20);
    const int cin = 3, cout = 2, h = 5, w = 6;
    auto xv = normals(rng, cin * h * w), wv = normals(rng, cout * cin * 9), bv = normals(rng, cout);
    Graph g;
    Var y = conv2d(g.input({1, cin, h, w}, xv), g.input({cout, cin, 3, 3}, wv), g.input({1, cout, 1, 1}, bv));
    for (int o = 0; o < cout; ++o)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          double s = bv[o];
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = yy + ky - 1, sx = xx + kx - 1;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                s += wv[((o * cin + c) * 3 + ky) * 3 + kx] * xv[(c * h + sy) * w + sx];
              }
          CHECK(y.value()[(o * h + yy) * w + xx] == doctest::Approx(s).epsilon(1e-12));
        }
  }

  TEST_CASE("conv2d on a tall map spans several im2col row bands") {
    SeededRng rng(21);
    ParamTensor w("w", {4, 2, 3, 3}), b("b", {1, 4, 1, 1});
    w.value = normals(rng, w.value.size());
    b.value = normals(rng, 4);
    auto xv = normals(rng, 2 * 300 * 40);
    auto f = [&](Graph& g) { return conv2d(g.input({1, 2, 300, 40}, xv), g.param(w), g.param(b)); };
    GradCheckResult r = gradcheck(f, {&w, &b}, rng, 6);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("rrdb with zero convolution weights is the identity") {
    Rrdb block("r", 4, 2);
    ParamList ps;
    block.collect(ps);
    for (ParamTensor* p : ps) std::fill(p->value.begin(), p->value.end(), 0.0);
    SeededRng rng(22);
    auto xv = normals(rng, 4 * 5 * 5);
    Graph g;
    Var y = block(g, g.input({1, 4, 5, 5}, xv));
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(y.value()[i] == xv[i]);
  }

  TEST_CASE("rrdb on a single pixel matches a scalar re-implementation") {
    // With zero padding only the centre tap of each 3x3 kernel sees data.
    const int ch = 2, gr = 2;
    Rrdb block("r", ch, gr);
    SeededRng rng(23);
    block.init(rng);
    ParamList ps;
    block.collect(ps);
    for (ParamTensor* p : ps)
      for (double& v : p->value) v = rng.uniform(-0.5, 0.5);
    std::vector<double> x{0.3, -1.1};

    auto conv_center = [](const Conv2d& c, const std::vector<double>& in) {
      const int co = c.out_channels(), ci = c.in_channels();
      std::vector<double> out(co);
      for (int o = 0; o < co; ++o) {
        double s = c.bias.value[o];
        for (int i = 0; i < ci; ++i) s += c.weight.value[((o * ci + i) * 3 + 1) * 3 + 1] * in[i];
        out[o] = s;
      }
      return out;
    };
    auto lrelu = [](std::vector<double> v) {
      for (double& t : v) t = t > 0 ? t : 0.2 * t;
      return v;
    };
    auto cat = [](std::vector<double> a, const std::vector<double>& b) {
      a.insert(a.end(), b.begin(), b.end());
      return a;
    };
    auto dense = [&](const DenseBlock& d, const std::vector<double>& z) {
      auto a = lrelu(conv_center(d.c1, z));
      auto b = lrelu(conv_center(d.c2, cat(z, a)));
      auto c = conv_center(d.c3, cat(cat(z, a), b));
      std::vector<double> out(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] + 0.2 * c[i];
      return out;
    };
    auto inner = dense(block.d3, dense(block.d2, dense(block.d1, x)));
    Graph g;
    Var y = block(g, g.input({1, ch, 1, 1}, x));
    for (int i = 0; i < ch; ++i) CHECK(y.value()[i] == doctest::Approx(x[i] + 0.2 * (inner[i] - x[i])).epsilon(1e-12));
  }

  TEST_CASE("l1 loss examples and elementwise oracle") {
    Graph g;
    Var t = g.input({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(l1_loss(t, t).item() == 0.0);
    CHECK(l1_loss(g.input({1, 1, 2, 2}, {2, 1, 4, 3}), t).item() == 1.0);
    SeededRng rng(24);
    auto a = normals(rng, 50), b = normals(rng, 50);
    double s = 0.0;
    for (int i = 0; i < 50; ++i) s += std::abs(a[i] - b[i]);
    CHECK(l1_loss(g.input({1, 2, 5, 5}, a), g.input({1, 2, 5, 5}, b)).item() == doctest::Approx(s / 50).epsilon(1e-14));
  }

  TEST_CASE("infonce closed forms and scale invariance") {
    Graph g;
    Var q = g.input({1, 2, 1, 1}, {1, 0});
    Var neg = g.input({1, 2, 1, 1}, {0, 1});
    CHECK(infonce(q, q, neg, 1.0).item() == doctest::Approx(-std::log(std::numbers::e / (std::numbers::e + 1))).epsilon(1e-12));
    CHECK(infonce(q, q, neg, 1.0).item() == doctest::Approx(0.3133).epsilon(1e-4));
    Var same = g.input({3, 2, 1, 1}, {1, 0, 1, 0, 1, 0});
    CHECK(infonce(q, q, same, 0.5).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    SeededRng rng(25);
    auto qa = normals(rng, 4), pa = normals(rng, 4), na = normals(rng, 12);
    auto x5 = [](std::vector<double> v) {
      for (double& t : v) t *= 5.0;
      return v;
    };
    const double l1 = infonce(g.input({1, 4, 1, 1}, qa), g.input({1, 4, 1, 1}, pa), g.input({3, 4, 1, 1}, na), 0.5).item();
    const double l5 =
        infonce(g.input({1, 4, 1, 1}, x5(qa)), g.input({1, 4, 1, 1}, x5(pa)), g.input({3, 4, 1, 1}, x5(na)), 0.5).item();
    CHECK(l1 == doctest::Approx(l5).epsilon(1e-12));
    CHECK_THROWS_AS(infonce(g.input({1, 2, 1, 1}, {0, 0}), q, neg, 1.0), DomainError);
  }

  TEST_CASE("adam: zero gradient, first step, quadratic descent") {
    ParamTensor p("p", {1, 1, 1, 1});
    p.value = {0.5};
    Adam opt({&p}, {1e-4});
    p.grad = {0.0};
    opt.step();
    CHECK(p.value[0] == 0.5);

    ParamTensor q("q", {1, 1, 1, 1});
    q.value = {0.0};
    Adam o2({&q}, {1e-4});
    q.grad = {1.0};
    o2.step();
    // m_hat = g, v_hat = g^2 after bias correction.
    CHECK(q.value[0] == doctest::Approx(-1e-4 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));

    ParamTensor x("x", {1, 1, 1, 1});
    x.value = {3.0};
    Adam o3({&x}, {0.05});
    double prev = 1e300;
    for (int i = 0; i < 100; ++i) {
      const double loss = 0.5 * x.value[0] * x.value[0];
      CHECK(loss < prev);
      prev = loss;
      x.grad = {x.value[0]};
      o3.step();
    }
  }

  TEST_CASE("ema: identity, one update, geometric series") {
    ParamTensor p("p", {1, 1, 1, 1});
    p.value = {1.0};
    Ema same({&p}, 0.999);
    same.update({&p});
    CHECK(same.shadow()[0][0] == 1.0);
    Ema e({&p}, 0.999, true);
    e.update({&p});
    CHECK(e.shadow()[0][0] == doctest::Approx(0.001).epsilon(1e-12));
    for (int n = 2; n <= 50; ++n) e.update({&p});
    CHECK(e.shadow()[0][0] == doctest::Approx(1.0 - std::pow(0.999, 50)).epsilon(1e-12));
    ParamTensor out("p", {1, 1, 1, 1});
    e.copy_debiased_to({&out});
    CHECK(out.value[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("checkpoint round trip and shape checks") {
    SeededRng rng(26);
    Conv2d c("layer", 2, 3, 3);
    c.init(rng);
    ParamList ps;
    c.collect(ps);
    const auto path = testutil::scratch("ck.bin");
    save_checkpoint(path, ps, {{"kind", "test"}});
    Conv2d d("layer", 2, 3, 3);
    ParamList pd;
    d.collect(pd);
    CheckpointMeta meta = load_checkpoint(path, pd);
    CHECK(meta.at("kind") == "test");
    CHECK(read_checkpoint_meta(path).at("kind") == "test");
    for (std::size_t i = 0; i < c.weight.value.size(); ++i)
      CHECK(d.weight.value[i] == static_cast<double>(static_cast<float>(c.weight.value[i])));
    Conv2d wrong("layer", 3, 3, 3);
    ParamList pw;
    wrong.collect(pw);
    CHECK_THROWS(load_checkpoint(path, pw));
  }

  TEST_CASE("gradcheck on a composite of graph ops") {
    SeededRng rng(27);
    ParamTensor x("x", {2, 3, 4, 4}), m("m", {1, 3, 1, 1});
    x.value = normals(rng, x.value.size());
    m.value = normals(rng, 3);
    auto f = [&](Graph& g) {
      Var xv = g.param(x);
      Var s = softmax(mul_channel(xv, g.param(m)));
      Var p = pixel_unfold(pixel_fold(s, 2), 2);
      Var r = concat_channels({channel_mean(p), slice_channels(xv, 1, 2)});
      return add(global_avg_pool(r), global_avg_pool(leaky_relu(r)));
    };
    CHECK(gradcheck(f, {&x, &m}, rng, 8).max_rel_error < 1e-6);
  }
}
