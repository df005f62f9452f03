#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fnode/gmm.hpp"
#include "fnode/syndata.hpp"

using namespace fnode;
using namespace fnode::gmm;
using tg::Tensor;

namespace {

// Rows drawn around each center with isotropic standard deviation sd.
Tensor clusters(const std::vector<std::vector<double>>& centers, std::size_t per, double sd, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  const std::size_t d = centers[0].size();
  std::vector<double> v;
  for (std::size_t i = 0; i < per; ++i)
    for (const auto& c : centers)
      for (std::size_t j = 0; j < d; ++j) v.push_back(c[j] + n(rng));
  return Tensor::matrix(per * centers.size(), d, v);
}

GMMModel standard_normal_1d() {
  GMMModel g;
  g.cov_type = CovType::Diag;
  g.dim = 1;
  g.weights = {1.0};
  g.means = Tensor::matrix(1, 1, {0.0});
  g.covariances = {{1.0}};
  return g;
}

GMMModel two_component_1d() {
  GMMModel g;
  g.cov_type = CovType::Full;
  g.dim = 1;
  g.weights = {0.3, 0.7};
  g.means = Tensor::matrix(2, 1, {-2.0, 1.5});
  g.covariances = {{0.5}, {2.0}};
  return g;
}

std::vector<double> sorted_means(const GMMModel& g) {
  std::vector<double> m;
  for (std::size_t k = 0; k < g.components(); ++k) m.push_back(g.means.at(k, 0));
  std::sort(m.begin(), m.end());
  return m;
}

}  // namespace

TEST_CASE("standard normal log density at its mean") {
  const double expected = -0.5 * std::log(2 * std::numbers::pi);
  CHECK(log_likelihood(standard_normal_1d(), std::vector<double>{0.0}) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(expected == doctest::Approx(-0.9189).epsilon(1e-4));
  for (CovType t : kAllCovTypes) {
    GMMModel g = standard_normal_1d();
    g.cov_type = t;
    CHECK(log_likelihood(g, std::vector<double>{1.0}) == doctest::Approx(expected - 0.5).epsilon(1e-15));
  }
}

TEST_CASE("log density ordering and far-point stability") {
  const GMMModel g = two_component_1d();
  const double at_mean = log_likelihood(g, std::vector<double>{1.5});
  for (double far : {1.5 + 5 * std::sqrt(2.0), 1.5 - 8.0, 40.0}) CHECK(at_mean >= log_likelihood(g, std::vector<double>{far}));
  const double very_far = log_likelihood(g, std::vector<double>{1.5 + 100 * std::sqrt(2.0)});
  CHECK(std::isfinite(very_far));
  CHECK(very_far < -2000.0);
  CHECK(std::isfinite(log_likelihood(g, std::vector<double>{1e8})));
}

TEST_CASE("mixture density integrates to one") {
  const GMMModel g = two_component_1d();
  const double lo = -20, hi = 20;
  const std::size_t n = 40000;
  const double h = (hi - lo) / n;
  double area = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    area += w * std::exp(log_likelihood(g, std::vector<double>{lo + i * h}));
  }
  CHECK(area * h == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("full covariance density matches the bivariate normal formula") {
  GMMModel g;
  g.cov_type = CovType::Full;
  g.dim = 2;
  g.weights = {1.0};
  g.means = Tensor::matrix(1, 2, {1.0, -1.0});
  const double s1 = 1.5, s2 = 0.7, rho = 0.6;
  g.covariances = {{s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2}};
  const double x = 2.2, y = -0.4;
  const double u = (x - 1.0) / s1, v = (y + 1.0) / s2;
  const double q = (u * u - 2 * rho * u * v + v * v) / (1 - rho * rho);
  const double expected = -std::log(2 * std::numbers::pi * s1 * s2 * std::sqrt(1 - rho * rho)) - 0.5 * q;
  CHECK(log_likelihood(g, std::vector<double>{x, y}) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("parameter counts") {
  CHECK(param_count(CovType::Spherical, 1, 2) == 3);
  CHECK(param_count(CovType::Diag, 2, 3) == 6 + 1 + 6);
  CHECK(param_count(CovType::Tied, 2, 3) == 6 + 1 + 6);
  CHECK(param_count(CovType::Full, 2, 3) == 6 + 1 + 12);
  CHECK(param_count(CovType::Spherical, 4, 5) == 20 + 3 + 4);
  for (std::size_t K = 1; K <= 5; ++K) CHECK(param_count(CovType::Full, K, 3) > param_count(CovType::Diag, K, 3));
}

TEST_CASE("BIC penalty grows by params * ln 2 when n doubles") {
  const Tensor rows = clusters({{0.0, 0.0}, {3.0, 1.0}}, 50, 0.5, 1);
  std::vector<double> twice(rows.values());
  twice.insert(twice.end(), rows.values().begin(), rows.values().end());
  const Tensor rows2 = Tensor::matrix(2 * rows.rows(), 2, twice);
  const auto fit = em_fit(bank_from_rows(rows), 2, CovType::Full, 3);
  const double b1 = bic(fit.model, bank_from_rows(rows));
  const double b2 = bic(fit.model, bank_from_rows(rows2));
  const double ll1 = total_log_likelihood(fit.model, rows), ll2 = total_log_likelihood(fit.model, rows2);
  CHECK(ll2 == doctest::Approx(2 * ll1).epsilon(1e-12));
  CHECK(b1 == doctest::Approx(-2 * ll1 + param_count(fit.model) * std::log(100.0)).epsilon(1e-12));
  CHECK((b2 + 2 * ll2) - (b1 + 2 * ll1) == doctest::Approx(param_count(fit.model) * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("single component EM gives the maximum-likelihood estimate") {
  const Tensor rows = clusters({{1.0, -2.0, 0.5}}, 400, 1.3, 2);
  const std::size_t n = rows.rows(), d = 3;
  std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows.at(i, j) / n;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += (rows.at(i, a) - mean[a]) * (rows.at(i, b) - mean[b]) / n;

  for (CovType t : kAllCovTypes) {
    CAPTURE(cov_type_name(t));
    const auto r = em_fit(bank_from_rows(rows), 1, t, 0);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(r.model.means.at(0, j) - mean[j]) <= 1e-8);
    const auto& c = r.model.covariances[0];
    if (t == CovType::Diag) {
      for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(c[j] - cov[j * d + j]) <= 1e-8);
    } else if (t == CovType::Spherical) {
      CHECK(std::abs(c[0] - (cov[0] + cov[4] + cov[8]) / 3) <= 1e-8);
    } else {
      for (std::size_t j = 0; j < d * d; ++j) CHECK(std::abs(c[j] - cov[j]) <= 1e-8);
    }
    CHECK(r.model.weights[0] == 1.0);
  }
}

TEST_CASE("single component variance is floored") {
  const Tensor rows = Tensor::matrix(4, 1, {2.0, 2.0, 2.0, 2.0});
  const auto r = em_fit(bank_from_rows(rows), 1, CovType::Diag, 0);
  CHECK(r.model.covariances[0][0] == kCovFloor);
  CHECK(r.model.means.at(0, 0) == 2.0);
}

TEST_CASE("EM log-likelihood never decreases") {
  const Tensor rows = clusters({{0, 0}, {2, 1}, {-1, 3}, {4, -2}}, 60, 0.9, 5);
  for (CovType t : kAllCovTypes)
    for (std::size_t K : {2, 3, 5}) {
      CAPTURE(cov_type_name(t));
      CAPTURE(K);
      EMOptions opt;
      opt.tol = 0.0;
      opt.max_iter = 60;
      const auto r = em_fit(bank_from_rows(rows), K, t, 11, opt);
      CHECK(r.reseeded == 0);
      for (std::size_t i = 1; i < r.loglik_history.size(); ++i)
        CHECK(r.loglik_history[i] >= r.loglik_history[i - 1] - 1e-9 * std::abs(r.loglik_history[i - 1]));
      CHECK(r.loglik_history.back() == doctest::Approx(total_log_likelihood(r.model, rows)).epsilon(1e-9));
    }
}

TEST_CASE("two separated clusters are recovered") {
  const Tensor rows = clusters({{-5.0}, {5.0}}, 200, 1.0, 6);
  for (CovType t : kAllCovTypes) {
    const auto r = em_fit(bank_from_rows(rows), 2, t, 1);
    const auto m = sorted_means(r.model);
    CHECK(std::abs(m[0] + 5.0) < 0.1 + 3.0 / std::sqrt(200.0));
    CHECK(std::abs(m[1] - 5.0) < 0.1 + 3.0 / std::sqrt(200.0));
    CHECK(r.model.weights[0] == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("BIC selects three components for three clusters") {
  const Tensor rows = clusters({{-5.0, 0.0}, {0.0, 0.0}, {5.0, 0.0}}, 150, 0.3, 7);
  std::vector<std::size_t> Ks;
  for (std::size_t k = 1; k <= 10; ++k) Ks.push_back(k);
  const std::vector<CovType> types(std::begin(kAllCovTypes), std::end(kAllCovTypes));
  const auto sel = select_model(bank_from_rows(rows), Ks, types, 4);
  CHECK(sel.model.components() == 3);
  CHECK(sel.failures.empty());
  CHECK(sel.table.size() == 40);
  const auto chosen = std::count_if(sel.table.begin(), sel.table.end(), [](const SelectionRow& r) { return r.selected; });
  CHECK(chosen == 1);
  for (const auto& r : sel.table) {
    if (r.selected) {
      for (const auto& o : sel.table) CHECK(o.bic >= r.bic);
    }
  }
  const auto m = sorted_means(sel.model);
  CHECK(m[0] == doctest::Approx(-5.0).epsilon(0.02));
  CHECK(std::abs(m[1]) < 0.1);
  CHECK(m[2] == doctest::Approx(5.0).epsilon(0.02));
  const auto csv = selection_csv(sel.table);
  CHECK(csv.rfind("K,cov_type,loglik,params,bic,selected\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
}

TEST_CASE("BIC selects one component for a single tight cluster") {
  const Tensor rows = clusters({{0.0, 0.0, 0.0}}, 300, 0.1, 8);
  const auto sel = select_model(bank_from_rows(rows), {1, 2, 3, 4, 5}, {CovType::Spherical, CovType::Diag, CovType::Full}, 2);
  CHECK(sel.model.components() == 1);
}

TEST_CASE("EM is invariant to row order") {
  Tensor rows = clusters({{-1.0, 0.0}, {1.5, 2.0}, {0.0, -2.0}}, 40, 0.6, 9);
  std::vector<std::size_t> perm(rows.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), make_rng(3));
  std::vector<double> shuffled;
  for (std::size_t i : perm) shuffled.insert(shuffled.end(), {rows.at(i, 0), rows.at(i, 1)});
  const Tensor rows2 = Tensor::matrix(rows.rows(), 2, shuffled);
  for (CovType t : kAllCovTypes) {
    const auto a = em_fit(bank_from_rows(rows), 3, t, 5);
    const auto b = em_fit(bank_from_rows(rows2), 3, t, 5);
    CHECK(a.model == b.model);
  }
}

TEST_CASE("sampling: frequencies, collapse and determinism") {
  GMMModel g;
  g.cov_type = CovType::Spherical;
  g.dim = 2;
  g.weights = {0.2, 0.5, 0.3};
  g.means = Tensor::matrix(3, 2, {-100, 0, 0, 0, 100, 0});
  g.covariances = {{1.0}, {1.0}, {1.0}};
  const std::size_t n = 10000;
  const Tensor s = sample(g, n, 17);
  REQUIRE(s.rows() == n);
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[s.at(i, 0) < -50 ? 0 : s.at(i, 0) > 50 ? 2 : 1] += 1;
  for (std::size_t k = 0; k < 3; ++k) {
    const double w = g.weights[k];
    CHECK(std::abs(counts[k] / n - w) <= 3 * std::sqrt(w * (1 - w) / n));
  }
  CHECK(sample(g, 50, 17) == sample(g, 50, 17));
  CHECK_FALSE(sample(g, 50, 17) == sample(g, 50, 18));

  GMMModel tight = standard_normal_1d();
  tight.means = Tensor::matrix(1, 1, {3.0});
  tight.covariances = {{kCovFloor}};
  const Tensor t = sample(tight, 100, 1);
  for (double v : t.values()) CHECK(std::abs(v - 3.0) < 0.01);
}

TEST_CASE("sample moments of a full covariance component") {
  GMMModel g;
  g.cov_type = CovType::Full;
  g.dim = 2;
  g.weights = {1.0};
  g.means = Tensor::matrix(1, 2, {1.0, -1.0});
  g.covariances = {{2.0, 0.8, 0.8, 1.0}};
  const std::size_t n = 20000;
  const Tensor s = sample(g, n, 2);
  double mx = 0, my = 0, cxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += s.at(i, 0) / n;
    my += s.at(i, 1) / n;
  }
  for (std::size_t i = 0; i < n; ++i) cxy += (s.at(i, 0) - mx) * (s.at(i, 1) - my) / n;
  CHECK(std::abs(mx - 1.0) < 4 * std::sqrt(2.0 / n));
  CHECK(std::abs(my + 1.0) < 4 * std::sqrt(1.0 / n));
  CHECK(cxy == doctest::Approx(0.8).epsilon(0.05));
}

TEST_CASE("model validation") {
  GMMModel g = two_component_1d();
  CHECK_NOTHROW(g.validate());
  g.weights = {0.5, 0.6};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = two_component_1d();
  g.covariances = {{1.0}};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = two_component_1d();
  g.cov_type = CovType::Diag;
  g.covariances = {{1.0}, {1e-9}};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = two_component_1d();
  g.dim = 2;
  g.covariances = {{1, 2, 2, 1}, {1, 0, 0, 1}};
  g.means = Tensor::matrix(2, 2, {0, 0, 1, 1});
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  CHECK(parse_cov_type("tied") == CovType::Tied);
  CHECK(cov_type_name(CovType::Spherical) == "spherical");
  CHECK_THROWS_AS(parse_cov_type("banana"), std::invalid_argument);
}

TEST_CASE("EM rejects impossible requests") {
  const Tensor rows = clusters({{0.0}}, 3, 1.0, 1);
  CHECK_THROWS(em_fit(bank_from_rows(rows), 0, CovType::Diag, 0));
  CHECK_THROWS(em_fit(bank_from_rows(rows), 4, CovType::Diag, 0));
}

namespace {

FNODEModel small_model(std::uint64_t seed) {
  ArchConfig a;
  a.latent_dim = 2;
  a.gamma_dim = 3;
  a.f_hidden = 4;
  a.f_hidden_layers = 1;
  a.hyper_hidden = 4;
  a.hyper_hidden_layers = 1;
  a.enc_hidden = 6;
  a.dec_hidden = 4;
  return make_model(a, 1, 5, seed);
}

data::PanelDataset three_trajectories() {
  data::SynthConfig c;
  c.n_per_class = 1;
  c.n_classes = 3;
  c.n_points = 5;
  return data::generate_set_a(c);
}

}  // namespace

TEST_CASE("gamma bank layout and provenance") {
  const FNODEModel m = small_model(1);
  const auto bank = collect_gamma_samples(m, three_trajectories(), 4, 2);
  CHECK(bank.rows() == 12);
  CHECK(bank.dim() == 3);
  CHECK(bank.n_gamma == 4);
  CHECK(bank.source == std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
  const auto joint = collect_gamma_samples(m, three_trajectories(), 4, 2, true);
  CHECK(joint.dim() == 5);
  CHECK(joint.joint);
  CHECK(collect_gamma_samples(m, three_trajectories(), 4, 2).samples == bank.samples);
  CHECK_THROWS_AS(collect_gamma_samples(m, three_trajectories(), 0, 2), std::invalid_argument);
}

TEST_CASE("degenerate encoder variance puts every draw on the mean") {
  FNODEModel m = small_model(2);
  auto& bias = m.params.get(nets::bias_name(m.enc_gamma.prefix, m.enc_gamma.spec.layers() - 1));
  for (std::size_t j = 0; j < 3; ++j) {
    bias[j] += 1.0;
    bias[3 + j] = -1400.0;
  }
  const auto data = three_trajectories();
  const auto bank = collect_gamma_samples(m, data, 1, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto q = nets::encode(m.enc_gamma, m.params, data.trajectories[i]);
    for (std::size_t j = 0; j < 3; ++j) CHECK(bank.samples.at(i, j) == q.mean[j]);
  }
}

TEST_CASE("bank means converge to the posterior means") {
  const FNODEModel m = small_model(3);
  const auto data = three_trajectories();
  const std::size_t n = 1000;
  const auto bank = collect_gamma_samples(m, data, n, 4);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto q = nets::encode(m.enc_gamma, m.params, data.trajectories[s]);
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += bank.samples.at(s * n + r, j) / n;
      CHECK(std::abs(mean - q.mean[j]) <= 3 * std::exp(0.5 * q.log_var[j]) / std::sqrt(static_cast<double>(n)));
    }
  }
}
