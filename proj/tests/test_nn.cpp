#include <catch2/catch_amalgamated.hpp>

#include "npcf/nn.hpp"

using namespace npcf;

namespace {

// Scalar loss for gradient checking: weighted sum of squared outputs.
double probe_loss(const Mlp& m, const Vec& in, const Vec& w) {
  const Vec out = m.forward(in);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < out.size(); ++i) acc += w[i] * out[i] * out[i];
  return acc;
}

Vec pack(const Mlp& m) {
  Eigen::Index n = 0;
  for (const auto& l : m.layers) n += l.W.size() + l.b.size();
  Vec out(n);
  Eigen::Index off = 0;
  for (const auto& l : m.layers) detail::pack_layer(l, out, off);
  return out;
}

void unpack(Mlp& m, const Vec& v) {
  Eigen::Index off = 0;
  for (auto& l : m.layers) detail::unpack_layer(l, v, off);
}

}  // namespace

TEST_CASE("mlp forward matches a hand computation", "[nn]") {
  Rng rng(1);
  const int sizes[] = {2, 2, 1};
  Mlp m = Mlp::make(sizes, Activation::softplus, false, rng);
  m.layers[0].W << 1.0, -1.0, 0.5, 2.0;
  m.layers[0].b << 0.1, -0.2;
  m.layers[1].W << 2.0, -3.0;
  m.layers[1].b << 0.25;
  Vec in(2);
  in << 0.3, -0.7;
  const double h0 = softplus(1.0 * 0.3 + (-1.0) * (-0.7) + 0.1);
  const double h1 = softplus(0.5 * 0.3 + 2.0 * (-0.7) - 0.2);
  const double expect = 2.0 * h0 - 3.0 * h1 + 0.25;
  CHECK(m.forward(in)(0) == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("mlp backward matches central finite differences", "[nn]") {
  for (auto act : {Activation::softplus, Activation::tanh_fn}) {
    for (bool act_last : {false, true}) {
      Rng rng(42);
      const int sizes[] = {3, 4, 2};
      Mlp m = Mlp::make(sizes, act, act_last, rng);
      Vec in(3);
      in << 0.4, -1.2, 0.9;
      Vec w(2);
      w << 1.3, -0.8;

      MlpCache cache;
      const Vec out = m.forward(in, &cache);
      Vec d_out(2);
      for (Eigen::Index i = 0; i < 2; ++i) d_out[i] = 2.0 * w[i] * out[i];
      auto grads = zero_grads_like(m);
      const Vec d_in = m.backward(cache, d_out, grads);

      Vec flat = pack(m);
      Vec gflat(flat.size());
      Eigen::Index off = 0;
      for (const auto& l : grads) detail::pack_layer(l, gflat, off);

      const double h = 1e-6;
      for (Eigen::Index i = 0; i < flat.size(); ++i) {
        Mlp mp = m, mm = m;
        Vec fp = flat, fm = flat;
        fp[i] += h;
        fm[i] -= h;
        unpack(mp, fp);
        unpack(mm, fm);
        const double fd = (probe_loss(mp, in, w) - probe_loss(mm, in, w)) / (2.0 * h);
        REQUIRE(gflat[i] == Catch::Approx(fd).margin(1e-6).epsilon(1e-5));
      }
      // input gradient as well
      for (Eigen::Index i = 0; i < in.size(); ++i) {
        Vec ip = in, im = in;
        ip[i] += h;
        im[i] -= h;
        const double fd = (probe_loss(m, ip, w) - probe_loss(m, im, w)) / (2.0 * h);
        REQUIRE(d_in[i] == Catch::Approx(fd).margin(1e-6).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("adam first step moves by roughly lr per coordinate", "[nn]") {
  Adam adam;
  adam.init(3);
  Vec p(3), g(3);
  p << 1.0, -2.0, 0.5;
  g << 0.3, -0.1, 0.0;
  const Vec p0 = p;
  adam.step(p, g, 0.01);
  // bias-corrected first step reduces to lr * g / (|g| + eps)
  CHECK(p[0] == Catch::Approx(p0[0] - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == Catch::Approx(p0[1] + 0.01 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
  CHECK(p[2] == p0[2]);
}

TEST_CASE("adam converges on a quadratic bowl", "[nn]") {
  Adam adam;
  adam.init(2);
  Vec p(2);
  p << 4.0, -3.0;
  for (int i = 0; i < 4000; ++i) {
    Vec g(2);
    g << 2.0 * p[0], 8.0 * p[1];
    adam.step(p, g, 0.01);
  }
  CHECK(std::abs(p[0]) < 1e-3);
  CHECK(std::abs(p[1]) < 1e-3);
}

TEST_CASE("pack and unpack round trip", "[nn]") {
  Rng rng(7);
  const int sizes[] = {5, 8, 3};
  Mlp m = Mlp::make(sizes, Activation::softplus, false, rng);
  const Vec flat = pack(m);
  Mlp m2 = Mlp::make(sizes, Activation::softplus, false, rng);  // different init
  unpack(m2, flat);
  CHECK(pack(m2) == flat);
  CHECK(m.n_params() == static_cast<std::size_t>(flat.size()));
}
