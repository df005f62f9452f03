#include <doctest.h>

#include <cmath>

#include "fnode/nets.hpp"

using namespace fnode;
using namespace fnode::nets;

namespace {

tg::Tensor random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return tg::Tensor::vector(v);
}

data::Trajectory small_trajectory() {
  data::Trajectory x;
  x.times = {0.0, 0.5, 1.0};
  x.values = {{0.1}, {0.7}, {-0.2}};
  return x;
}

}  // namespace

TEST_CASE("zero MLP maps anything to zero") {
  const MLPSpec spec{{3, 5, 2}};
  tg::ParamSet p;
  init_mlp_zero(p, "m", spec);
  const auto y = mlp_forward(spec, p, "m", tg::Tensor::vector({4.0, -2.0, 9.0}));
  CHECK(y == tg::Tensor::vector({0.0, 0.0}));
}

TEST_CASE("single identity layer passes input through") {
  const MLPSpec spec{{2, 2}};
  tg::ParamSet p;
  p.add("m.W0", tg::Tensor::matrix(2, 2, {1, 0, 0, 1}));
  p.add("m.b0", tg::Tensor::vector({0, 0}));
  CHECK(mlp_forward(spec, p, "m", tg::Tensor::vector({0.3, -7.0})) == tg::Tensor::vector({0.3, -7.0}));
}

TEST_CASE("two-layer network against a hand computation") {
  const MLPSpec spec{{2, 2, 2}};
  tg::ParamSet p;
  p.add("m.W0", tg::Tensor::matrix(2, 2, {1, 2, -1, 0.5}));
  p.add("m.b0", tg::Tensor::vector({0.1, -0.2}));
  p.add("m.W1", tg::Tensor::matrix(2, 2, {0.5, -1, 2, 1}));
  p.add("m.b1", tg::Tensor::vector({0.0, 0.3}));
  const double x0 = 0.4, x1 = -0.3;
  const double h0 = std::tanh(1 * x0 + 2 * x1 + 0.1), h1 = std::tanh(-1 * x0 + 0.5 * x1 - 0.2);
  const auto y = mlp_forward(spec, p, "m", tg::Tensor::vector({x0, x1}));
  CHECK(y[0] == doctest::Approx(0.5 * h0 - h1).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(2 * h0 + h1 + 0.3).epsilon(1e-15));

  MLPSpec bounded = spec;
  bounded.final_activation = Activation::Tanh;
  const auto z = mlp_forward(bounded, p, "m", tg::Tensor::vector({x0, x1}));
  CHECK(z[0] == doctest::Approx(std::tanh(0.5 * h0 - h1)).epsilon(1e-15));
}

TEST_CASE("mlp accepts a batch of rows") {
  Rng rng = make_rng(9);
  const MLPSpec spec{{3, 4, 2}};
  tg::ParamSet p;
  init_mlp(p, "m", spec, rng);
  const auto r0 = random_vector(3, rng), r1 = random_vector(3, rng);
  std::vector<double> both(r0.values());
  both.insert(both.end(), r1.values().begin(), r1.values().end());
  const auto y = mlp_forward(spec, p, "m", tg::Tensor::matrix(2, 3, both));
  const auto y0 = mlp_forward(spec, p, "m", r0), y1 = mlp_forward(spec, p, "m", r1);
  CHECK(y.at(0, 0) == y0[0]);
  CHECK(y.at(1, 1) == y1[1]);
}

TEST_CASE("functional forward equals the named-parameter network bit for bit") {
  const MLPSpec spec{{9, 100, 100, 8}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed);
    tg::ParamSet p;
    init_mlp(p, "f", spec, rng);
    const auto theta = flatten_mlp(p, "f", spec);
    CHECK(theta.size() == spec.weight_count());
    const auto x = random_vector(9, rng);
    CHECK(functional_forward(spec, WeightVector{theta}, x) == mlp_forward(spec, p, "f", x));
  }
}

TEST_CASE("zero weight vector gives zero output") {
  const MLPSpec spec{{3, 6, 2}};
  const tg::Tensor theta({spec.weight_count()});
  CHECK(functional_forward(spec, WeightVector{theta}, tg::Tensor::vector({1, 2, 3})) == tg::Tensor::vector({0, 0}));
  CHECK_THROWS_AS(functional_forward(spec, WeightVector{tg::Tensor({5})}, tg::Tensor::vector({1, 2, 3})),
                  std::invalid_argument);
}

TEST_CASE("functional forward gradient wrt theta matches finite differences") {
  const MLPSpec spec{{3, 7, 2}};
  Rng rng = make_rng(21);
  tg::ParamSet p;
  p.add("theta", random_vector(spec.weight_count(), rng, 0.8));
  const tg::Tensor x = random_vector(3, rng);
  const tg::Program prog = [&](tg::Tape& t, const tg::ParamVars& v, std::span<const tg::Var> in) {
    return t.sum(t.square(functional_forward(spec, v["theta"], in[0])));
  };
  const tg::Tensor inputs[] = {x};
  CHECK(tg::finite_diff_check(prog, p, inputs, 1e-5) <= 1e-4);
}

TEST_CASE("hypernetwork output is bounded by lambda") {
  Hypernetwork h{MLPSpec{{4, 16, 30}, Activation::Tanh}, "hyper"};
  Rng rng = make_rng(5);
  tg::ParamSet p;
  h.init(p, rng, 0.7);
  for (int i = 0; i < 20; ++i) {
    const auto theta = hypernet_map(h, p, random_vector(4, rng, 50.0)).theta;
    for (double v : theta.values()) CHECK(std::abs(v) <= 0.7);
  }
  p.get(h.lambda_name())[0] = 0.0;
  const auto zero = hypernet_map(h, p, random_vector(4, rng, 3.0)).theta;
  for (double v : zero.values()) CHECK(v == 0.0);

  Hypernetwork open{MLPSpec{{4, 30}}, "bad"};
  CHECK_THROWS_AS(open.init(p, rng, 1.0), std::invalid_argument);
}

TEST_CASE("hypernetwork saturates at plus and minus lambda") {
  Hypernetwork h{MLPSpec{{1, 2}, Activation::Tanh}, "h"};
  tg::ParamSet p;
  p.add("h.W0", tg::Tensor::matrix(2, 1, {0.0, 1000.0}));
  p.add("h.b0", tg::Tensor::vector({0.0, 0.0}));
  p.add(h.lambda_name(), tg::Tensor::vector({2.0}));
  const auto theta = hypernet_map(h, p, tg::Tensor::vector({1.0})).theta;
  CHECK(theta[0] == 0.0);
  CHECK(theta[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(hypernet_map(h, p, tg::Tensor::vector({-1.0})).theta[1] == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("encoder input layout: mask, time, values, zero padding") {
  const auto in = encoder_input(small_trajectory(), 4, 1);
  CHECK(in.values() == std::vector<double>{1, 0.0, 0.1, 1, 0.5, 0.7, 1, 1.0, -0.2, 0, 0, 0});
  CHECK_THROWS_AS(encoder_input(small_trajectory(), 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(encoder_input(small_trajectory(), 4, 2), std::invalid_argument);
}

TEST_CASE("zero encoder gives the standard normal") {
  Encoder enc{MLPSpec{{12, 8, 4}}, "enc", 4, 1};
  tg::ParamSet p;
  init_mlp_zero(p, "enc", enc.spec);
  const auto g = encode(enc, p, small_trajectory());
  CHECK(g.dim() == 2);
  CHECK(g.mean == tg::Tensor::vector({0, 0}));
  CHECK(g.log_var == tg::Tensor::vector({0, 0}));
}

TEST_CASE("encoder is deterministic and sensitive to a single observation") {
  Encoder enc{MLPSpec{{12, 8, 4}}, "enc", 4, 1};
  Rng rng = make_rng(8);
  tg::ParamSet p;
  init_mlp(p, "enc", enc.spec, rng);
  auto x = small_trajectory();
  const auto a = encode(enc, p, x), b = encode(enc, p, x);
  CHECK(a.mean == b.mean);
  CHECK(a.log_var == b.log_var);
  x.values[1][0] += 0.5;
  CHECK_FALSE(encode(enc, p, x).mean == a.mean);
}

TEST_CASE("zero decoder outputs zero") {
  Decoder dec{MLPSpec{{8, 64, 1}}, "dec"};
  tg::ParamSet p;
  init_mlp_zero(p, "dec", dec.spec);
  Rng rng = make_rng(1);
  CHECK(decode(dec, p, random_vector(8, rng)) == tg::Tensor::vector({0.0}));
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(MLPSpec{{3}}.validate(), std::invalid_argument);
  CHECK_THROWS_AS((MLPSpec{{3, 0, 2}}.validate()), std::invalid_argument);
  CHECK((MLPSpec{{9, 100, 100, 8}}.weight_count()) == 9 * 100 + 100 + 100 * 100 + 100 + 100 * 8 + 8);
}
