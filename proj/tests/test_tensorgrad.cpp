#include <doctest.h>

#include <cmath>

#include "fnode/program.hpp"
#include "fnode/rng.hpp"

using namespace fnode::tg;

namespace {

ParamSet one(const std::string& name, Tensor t) {
  ParamSet p;
  p.add(name, std::move(t));
  return p;
}

Tensor random_tensor(Shape shape, fnode::Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, v);
}

}  // namespace

TEST_CASE("tensor construction validates shape and values") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(Tensor({1}, {NAN}), Error);
  CHECK_THROWS_AS(Tensor({1}, {INFINITY}), Error);
  CHECK_THROWS_AS(Tensor({1, 1, 1}), Error);
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6.0);
  CHECK(Tensor::scalar(4).item() == 4.0);
  CHECK_THROWS_AS(m.reshaped({4}), Error);
  CHECK(m.reshaped({3, 2}).at(2, 1) == 6.0);
}

TEST_CASE("param set keeps insertion order and rejects duplicates") {
  ParamSet p;
  p.add("z", Tensor::vector({1}));
  p.add("a", Tensor::vector({2, 3}));
  CHECK_THROWS_AS(p.add("z", Tensor::vector({0})), Error);
  CHECK(p.entry(0).first == "z");
  CHECK(p.entry(1).first == "a");
  CHECK(p.total_size() == 3);
  CHECK(p.flatten() == std::vector<double>{1, 2, 3});
  p.assign_flat(std::vector<double>{7, 8, 9});
  CHECK(p.get("a")[1] == 9.0);
  CHECK_THROWS_AS(p.assign_flat(std::vector<double>{1}), Error);
  CHECK_THROWS_AS(p.get("missing"), Error);
}

TEST_CASE("evaluate: hand-computed programs") {
  const Program dot = [](Tape& t, const ParamVars&, std::span<const Var> in) { return t.sum(t.mul(in[0], in[1])); };
  const Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4});
  const Tensor ab[] = {a, b};
  CHECK(evaluate(dot, {}, ab).item() == 11.0);

  const Program th = [](Tape& t, const ParamVars&, std::span<const Var> in) { return t.tanh(in[0]); };
  const Tensor zero[] = {Tensor::scalar(0)};
  CHECK(evaluate(th, {}, zero).item() == 0.0);

  const Program mm = [](Tape& t, const ParamVars&, std::span<const Var> in) { return t.matmul(in[0], in[1]); };
  const Tensor mv[] = {Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::vector({1, 2, 3})};
  CHECK(evaluate(mm, {}, mv).values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("gradient: analytic derivatives") {
  const Program sq = [](Tape& t, const ParamVars& p, std::span<const Var>) { return t.sum(t.square(p["x"])); };
  CHECK(gradient(sq, one("x", Tensor::vector({3})), {}).get("x")[0] == doctest::Approx(6.0));

  const Program th = [](Tape& t, const ParamVars& p, std::span<const Var>) { return t.sum(t.tanh(p["x"])); };
  CHECK(gradient(th, one("x", Tensor::vector({0})), {}).get("x")[0] == doctest::Approx(1.0));

  const Program wv = [](Tape& t, const ParamVars& p, std::span<const Var> in) { return t.sum(t.matmul(p["W"], in[0])); };
  const Tensor v[] = {Tensor::vector({1, 2})};
  const Tensor g = gradient(wv, one("W", Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6})), v).get("W");
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(g.at(r, 0) == 1.0);
    CHECK(g.at(r, 1) == 2.0);
  }
}

TEST_CASE("gradient of an unused parameter is zero") {
  ParamSet p = one("x", Tensor::vector({2}));
  p.add("unused", Tensor::vector({1, 1}));
  const Program f = [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(v["x"])); };
  const ParamSet g = gradient(f, p, {});
  CHECK(g.get("unused").values() == std::vector<double>{0, 0});
}

TEST_CASE("finite_diff_check on cube and constant programs") {
  const Program cube = [](Tape& t, const ParamVars& p, std::span<const Var>) {
    return t.sum(t.mul(t.square(p["x"]), p["x"]));
  };
  // d/dx x^3 = 12 at x=2; central difference error is h^2 = 1e-10 in absolute terms.
  CHECK(finite_diff_check(cube, one("x", Tensor::vector({2})), {}, 1e-5) <= 1e-6);

  const Program constant = [](Tape& t, const ParamVars&, std::span<const Var>) {
    return t.constant(Tensor::scalar(3.0));
  };
  CHECK(finite_diff_check(constant, one("x", Tensor::vector({1, 2})), {}, 1e-5) == 0.0);
}

TEST_CASE("finite_diff_check on a 3-100-100-8 tanh MLP") {
  fnode::Rng rng = fnode::make_rng(42);
  const std::size_t widths[] = {3, 100, 100, 8};
  ParamSet p;
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    p.add("W" + std::to_string(l), random_tensor({widths[l + 1], widths[l]}, rng, bound));
    p.add("b" + std::to_string(l), random_tensor({widths[l + 1]}, rng, bound));
  }
  const Program mlp = [](Tape& t, const ParamVars& v, std::span<const Var> in) {
    Var h = in[0];
    for (int l = 0; l < 3; ++l) {
      h = t.linear(h, v["W" + std::to_string(l)], v["b" + std::to_string(l)]);
      if (l < 2) h = t.tanh(h);
    }
    return t.sum(t.square(h));
  };
  const Tensor x[] = {Tensor::vector({0.3, -0.7, 0.2})};
  CHECK(finite_diff_check(mlp, p, x, 1e-5) <= 1e-4);
}

TEST_CASE("every primitive passes the finite-difference check") {
  fnode::Rng rng = fnode::make_rng(7);
  ParamSet p;
  p.add("a", random_tensor({2, 3}, rng));
  p.add("b", random_tensor({2, 3}, rng));
  p.add("v", random_tensor({3}, rng));
  p.add("w", random_tensor({4, 3}, rng));
  p.add("bias", random_tensor({4}, rng));
  p.add("m", random_tensor({3, 2}, rng));
  p.add("s", Tensor::vector({0.7}));
  std::vector<std::pair<const char*, Program>> cases = {
      {"add", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.add(v["a"], v["b"]))); }},
      {"sub", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.sub(v["a"], v["b"]))); }},
      {"mul", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.mul(v["a"], v["b"])); }},
      {"add_scaled",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.add_scaled(v["a"], v["b"], -1.5))); }},
      {"scale", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.scale(v["a"], 2.5))); }},
      {"mul_scalar",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.mul_scalar(v["a"], v["s"]))); }},
      {"add_row",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.add_row(v["a"], v["v"]))); }},
      {"linear",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.linear(v["a"], v["w"], v["bias"]))); }},
      {"linear_vec",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.linear(v["v"], v["w"], Var{}))); }},
      {"matmul", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.matmul(v["a"], v["m"]))); }},
      {"matvec", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.matmul(v["w"], v["v"]))); }},
      {"tanh", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.tanh(t.scale(v["a"], 2.0))); }},
      {"exp", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.exp(v["a"])); }},
      {"log", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.log(t.exp(v["a"]))); }},
      {"mean", [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.mean(t.square(v["a"])); }},
      {"concat",
       [](Tape& t, const ParamVars& v, std::span<const Var>) {
         const Var parts[] = {v["v"], v["bias"]};
         return t.sum(t.square(t.concat(parts)));
       }},
      {"slice",
       [](Tape& t, const ParamVars& v, std::span<const Var>) { return t.sum(t.square(t.slice(v["w"], 2, {2, 3}))); }},
      {"reshape",
       [](Tape& t, const ParamVars& v, std::span<const Var>) {
         return t.sum(t.square(t.matmul(t.reshape(v["a"], {3, 2}), v["v"].tape->reshape(v["bias"], {2, 2}))));
       }},
  };
  for (const auto& [name, prog] : cases) {
    CAPTURE(name);
    CHECK(finite_diff_check(prog, p, {}, 1e-5) <= 1e-4);
  }
}

TEST_CASE("vector-Jacobian product seeds") {
  Tape t;
  const Var x = t.leaf(Tensor::vector({1, 2, 3}));
  const Var y = t.square(x);
  const std::pair<Var, Tensor> seeds[] = {{y, Tensor::vector({1, 0, 2})}};
  t.backward(seeds);
  // d/dx sum(c * x^2) = 2 c x
  CHECK(t.grad(x).values() == std::vector<double>{2, 0, 12});
}

TEST_CASE("non-finite results are reported with the node index") {
  Tape t;
  const Var x = t.leaf(Tensor::vector({-1.0}));
  CHECK_THROWS_AS(t.log(x), NonFiniteError);
  const Var big = t.leaf(Tensor::vector({1000.0}));
  try {
    t.exp(big);
    FAIL("expected an overflow error");
  } catch (const NonFiniteError& e) {
    CHECK(e.index() == t.size());
  }
}

TEST_CASE("shape mismatches are rejected") {
  Tape t;
  const Var a = t.leaf(Tensor::vector({1, 2}));
  const Var b = t.leaf(Tensor::vector({1, 2, 3}));
  CHECK_THROWS_AS(t.add(a, b), Error);
  CHECK_THROWS_AS(t.matmul(a, b), Error);
  CHECK_THROWS_AS(t.backward(a), Error);
}
