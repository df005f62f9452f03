#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "fnode/syndata.hpp"

using namespace fnode::data;

namespace {

constexpr double kPi = std::numbers::pi;

SynthConfig noiseless(std::vector<double> params) {
  SynthConfig c;
  c.n_classes = params.size();
  c.class_params = std::move(params);
  c.n_per_class = 5;
  c.noise_var = 0.0;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("set A follows the amplitude formula") {
  const auto d = generate_set_a(noiseless({2.0, 0.0}));
  CHECK(d.size() == 10);
  CHECK(d.obs_dim == 1);
  CHECK(d.meta.generator == "set_a");
  for (const auto& x : d.trajectories) {
    const double a = x.label == 0 ? 2.0 : 0.0;
    CHECK(x.meta.at("A") == a);
    CHECK(x.length() == 10);
    for (std::size_t i = 0; i < x.length(); ++i) {
      CHECK(x.times[i] >= 0.0);
      CHECK(x.times[i] <= 1.5);
      CHECK(x.values[i][0] == doctest::Approx(a * std::sin(2 * kPi * x.times[i])).epsilon(1e-15));
    }
  }
  CHECK(2.0 * std::sin(2 * kPi * 0.25) == doctest::Approx(2.0));
}

TEST_CASE("set B follows the frequency formula and matches set A at B=1") {
  const auto b = generate_set_b(noiseless({2.0, 1.0}));
  CHECK(b.meta.generator == "set_b");
  CHECK(b.meta.class_params == std::vector<double>{2.0, 1.0});
  for (const auto& x : b.trajectories) {
    const double f = x.label == 0 ? 2.0 : 1.0;
    CHECK(x.meta.at("B") == f);
    for (std::size_t i = 0; i < x.length(); ++i)
      CHECK(x.values[i][0] == doctest::Approx(std::sin(2 * kPi * f * x.times[i])).epsilon(1e-15));
  }
  CHECK(std::abs(std::sin(2 * kPi * 2.0 * 0.25)) < 1e-15);

  const auto a1 = generate_set_a(noiseless({1.0}));
  const auto b1 = generate_set_b(noiseless({1.0}));
  for (std::size_t j = 0; j < a1.size(); ++j) {
    CHECK(a1.trajectories[j].times == b1.trajectories[j].times);
    CHECK(a1.trajectories[j].values == b1.trajectories[j].values);
  }
}

TEST_CASE("origin shares the per-trajectory noise") {
  SynthConfig c;
  c.n_per_class = 4;
  c.n_classes = 3;
  c.include_origin = true;
  c.seed = 12;
  for (const auto& d : {generate_set_a(c), generate_set_b(c)}) {
    for (const auto& x : d.trajectories) {
      REQUIRE(x.times.front() == 0.0);
      const double eps = x.values[0][0];
      CHECK(std::abs(eps) < 0.2);  // six standard deviations at variance 1e-3
      const double p = d.meta.class_params[static_cast<std::size_t>(*x.label)];
      for (std::size_t i = 1; i < x.length(); ++i) {
        const double clean = d.meta.generator == "set_a" ? p * std::sin(2 * kPi * x.times[i])
                                                         : std::sin(2 * kPi * p * x.times[i]);
        CHECK(x.values[i][0] - clean == doctest::Approx(eps).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("zero amplitude gives pure noise around zero") {
  SynthConfig c = noiseless({0.0});
  c.noise_var = 1e-3;
  c.noise = NoiseMode::PerPoint;
  c.n_per_class = 200;
  const auto d = generate_set_a(c);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& x : d.trajectories)
    for (const auto& v : x.values) {
      sum += v[0];
      sq += v[0] * v[0];
      ++n;
    }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 3 * std::sqrt(1e-3 / n));
  CHECK(var == doctest::Approx(1e-3).epsilon(0.1));
}

TEST_CASE("class parameters are drawn from Unif(0,10) and reproducible") {
  const auto p = draw_class_params(7, 10);
  CHECK(p.size() == 10);
  for (double v : p) {
    CHECK(v >= 0.0);
    CHECK(v < 10.0);
  }
  CHECK(p == draw_class_params(7, 10));
  CHECK_FALSE(p == draw_class_params(8, 10));
  SynthConfig c;
  c.seed = 7;
  c.n_per_class = 2;
  CHECK(generate_set_a(c).meta.class_params == p);
  CHECK(generate_set_a(c) == generate_set_a(c));
}

TEST_CASE("times are sorted and distinct") {
  SynthConfig c;
  c.n_per_class = 20;
  c.n_points = 30;
  for (const auto& x : generate_set_b(c).trajectories) {
    std::set<double> s(x.times.begin(), x.times.end());
    CHECK(s.size() == 30);
    CHECK(std::is_sorted(x.times.begin(), x.times.end()));
  }
}

TEST_CASE("generator validation") {
  SynthConfig c;
  c.n_per_class = 0;
  CHECK_THROWS_AS(generate_set_a(c), std::invalid_argument);
  c = {};
  c.t_max = 0.0;
  CHECK_THROWS_AS(generate_set_a(c), std::invalid_argument);
  c = {};
  c.noise_var = -1.0;
  CHECK_THROWS_AS(generate_set_b(c), std::invalid_argument);
  c = {};
  c.class_params = std::vector<double>{1.0};
  CHECK_THROWS_AS(generate_set_b(c), std::invalid_argument);
}

TEST_CASE("JSON lines round trip is bit-exact") {
  SynthConfig c;
  c.n_per_class = 3;
  c.seed = 99;
  c.noise = NoiseMode::PerPoint;
  auto d = generate_set_a(c);
  d.trajectories[1].label.reset();
  const auto back = dataset_from_jsonl(dataset_to_jsonl(d));
  CHECK(back == d);
  CHECK(dataset_to_jsonl(back) == dataset_to_jsonl(d));
}

TEST_CASE("malformed dataset files") {
  CHECK_THROWS_AS(dataset_from_jsonl(""), FormatError);
  CHECK_THROWS_AS(dataset_from_jsonl("\n\n"), FormatError);
  const std::string header =
      R"({"header":true,"format":"fnode-panel","version":1,"obs_dim":1,"generator":"x","seed":0,"params":{},"class_params":[]})";
  CHECK_THROWS_AS(dataset_from_jsonl(header + "\n"), FormatError);
  try {
    dataset_from_jsonl(header + "\n" + R"({"label":0,"times":[0,1],"values":[[1],[2]]})" + "\n" +
                       R"({"label":0,"times":[0,1],"values":[[1,2],[2,3]]})" + "\n");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
  }
  try {
    dataset_from_jsonl(header + "\n" + R"({"label":0,"times":[1,0],"values":[[1],[2]]})" + "\n");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(dataset_from_jsonl("{\"label\":0}\n"), FormatError);
  CHECK_THROWS_AS(dataset_from_jsonl("not json\n"), FormatError);
}

TEST_CASE("dataset validation catches mixed observation widths") {
  PanelDataset d;
  d.obs_dim = 1;
  d.trajectories.push_back({{0.0}, {{1.0}}, 0, {}});
  d.trajectories.push_back({{0.0}, {{1.0, 2.0}}, 0, {}});
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
  CHECK_THROWS_AS(PanelDataset{}.validate(), std::invalid_argument);
}

TEST_CASE("split per class takes the first trajectories of each label") {
  SynthConfig c;
  c.n_per_class = 5;
  c.n_classes = 3;
  const auto d = generate_set_a(c);
  const auto [keep, held] = split_per_class(d, 2);
  CHECK(held.size() == 6);
  CHECK(keep.size() == 9);
  CHECK(held.trajectories[0] == d.trajectories[0]);
  CHECK(held.trajectories[1] == d.trajectories[1]);
  CHECK(held.trajectories[2] == d.trajectories[5]);
  CHECK(keep.trajectories[0] == d.trajectories[2]);
  CHECK(keep.meta == d.meta);
}

TEST_CASE("truncate keeps the leading fraction of the time span") {
  Trajectory x{{0.0, 0.2, 0.5, 0.9, 1.0}, {{1}, {2}, {3}, {4}, {5}}, 1, {}};
  CHECK(truncate_fraction(x, 1.0) == x);
  const auto half = truncate_fraction(x, 0.5);
  CHECK(half.times == std::vector<double>{0.0, 0.2, 0.5});
  CHECK(half.label == 1);
  CHECK(truncate_fraction(x, 0.01).length() == 1);
  CHECK_THROWS_AS(truncate_fraction(x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(truncate_fraction(x, 1.1), std::invalid_argument);
  // Spans that are not exact in binary keep their last point at fraction 1.
  Trajectory y{{0.1, 0.7, 1.3}, {{1}, {2}, {3}}, {}, {}};
  CHECK(truncate_fraction(y, 1.0).length() == 3);
}
