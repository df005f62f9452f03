#include <doctest.h>
#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fnode/kernels.hpp"
#include "fnode/rng.hpp"

using namespace fnode::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, fnode::Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  CHECK(worst <= tol);
}

const LinearDims kShapes[] = {{1, 9, 100}, {1, 100, 100}, {1, 100, 8}, {50, 16, 128}, {7, 33, 21}, {50, 128, 600}, {3, 1, 1}};

}  // namespace

TEST_CASE("parallel linear forward matches the serial reference") {
  fnode::Rng rng = fnode::make_rng(1);
  for (const auto d : kShapes) {
    CAPTURE(d.batch);
    CAPTURE(d.in);
    CAPTURE(d.out);
    const auto x = random_vec(d.batch * d.in, rng), w = random_vec(d.out * d.in, rng), b = random_vec(d.out, rng);
    std::vector<double> ys(d.batch * d.out), yp(d.batch * d.out);
    serial::linear_forward(d, x, w, b, ys);
    par::linear_forward(d, x, w, b, yp);
    check_close(yp, ys, 1e-13);
    serial::linear_forward(d, x, w, {}, ys);
    par::linear_forward(d, x, w, {}, yp);
    check_close(yp, ys, 1e-13);
  }
}

TEST_CASE("parallel linear backward matches the serial reference") {
  fnode::Rng rng = fnode::make_rng(2);
  for (const auto d : kShapes) {
    CAPTURE(d.batch);
    CAPTURE(d.in);
    CAPTURE(d.out);
    const auto x = random_vec(d.batch * d.in, rng), w = random_vec(d.out * d.in, rng), dy = random_vec(d.batch * d.out, rng);
    // Nonzero starting buffers check that both builds accumulate.
    const auto dx0 = random_vec(d.batch * d.in, rng), dw0 = random_vec(d.out * d.in, rng), db0 = random_vec(d.out, rng);
    auto dxs = dx0, dws = dw0, dbs = db0, dxp = dx0, dwp = dw0, dbp = db0;
    serial::linear_backward(d, dy, x, w, dxs, dws, dbs);
    par::linear_backward(d, dy, x, w, dxp, dwp, dbp);
    check_close(dxp, dxs, 1e-13);
    check_close(dwp, dws, 1e-13);
    check_close(dbp, dbs, 1e-13);
    // Skipped outputs stay untouched.
    auto only_dx = dx0;
    par::linear_backward(d, dy, x, w, only_dx, {}, {});
    check_close(only_dx, dxs, 1e-13);
  }
}

TEST_CASE("parallel matmul matches the serial reference") {
  fnode::Rng rng = fnode::make_rng(3);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 5, 1}, {4, 7, 3}, {64, 32, 48}}) {
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> cs(m * n), cp(m * n);
    serial::matmul(m, k, n, a, b, cs);
    par::matmul(m, k, n, a, b, cp);
    check_close(cp, cs, 1e-13);
  }
}

TEST_CASE("parallel kernels give identical bits for any thread count") {
  fnode::Rng rng = fnode::make_rng(4);
  const LinearDims d{50, 128, 2000};
  const auto x = random_vec(d.batch * d.in, rng), w = random_vec(d.out * d.in, rng), b = random_vec(d.out, rng);
  const auto dy = random_vec(d.batch * d.out, rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> y(d.batch * d.out), dx(d.batch * d.in), dw(d.out * d.in), db(d.out);
    par::linear_forward(d, x, w, b, y);
    par::linear_backward(d, dy, x, w, dx, dw, db);
    y.insert(y.end(), dx.begin(), dx.end());
    y.insert(y.end(), dw.begin(), dw.end());
    y.insert(y.end(), db.begin(), db.end());
    return y;
  };
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(omp_get_num_procs());
  CHECK(one == four);
}

TEST_CASE("matmul backward against an explicit transpose product") {
  fnode::Rng rng = fnode::make_rng(5);
  const std::size_t m = 3, k = 4, n = 5;
  const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), dc = random_vec(m * n, rng);
  std::vector<double> da(m * k, 0.0), db(k * n, 0.0);
  matmul_backward(m, k, n, dc, a, b, da, db);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += dc[i * n + c] * b[j * n + c];
      CHECK(da[i * k + j] == doctest::Approx(s).epsilon(1e-13));
    }
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + j] * dc[i * n + c];
      CHECK(db[j * n + c] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("vector tanh agrees with std::tanh") {
  std::vector<double> x;
  for (int i = -2000; i <= 2000; ++i) x.push_back(i * 0.01);
  x.push_back(1e-300);
  x.push_back(-750.0);
  x.push_back(750.0);
  for (std::size_t n : {x.size(), std::size_t{1}, std::size_t{3}, std::size_t{9}}) {
    std::vector<double> y(n);
    tanh(std::span<const double>(x.data(), n), y);
    for (std::size_t i = 0; i < n; ++i) {
      const double ref = std::tanh(x[i]);
      CHECK(std::abs(y[i] - ref) <= 1e-15 * std::abs(ref) + 1e-300);
    }
  }
}
