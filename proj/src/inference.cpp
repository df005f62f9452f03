#include "fnode/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fnode/rng.hpp"

namespace fnode::inference {

namespace {

tg::Tensor row_slice(const tg::Tensor& rows, std::size_t i, std::size_t begin, std::size_t count) {
  const auto& v = rows.values();
  const auto start = v.begin() + static_cast<std::ptrdiff_t>(i * rows.cols() + begin);
  return tg::Tensor::vector(std::vector<double>(start, start + static_cast<std::ptrdiff_t>(count)));
}

tg::Tensor posterior_mean_z0(const FNODEModel& m, const data::Trajectory& x) {
  return nets::encode(m.enc_z0, m.params, x).mean;
}

// Runs body(i) for i in [0, n) in parallel and rethrows the first failure.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double euclidean(const tg::Tensor& a, const tg::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

bool is_joint(const FNODEModel& m, const gmm::GMMModel& S) {
  if (S.dim == m.gamma_dim) return false;
  if (S.dim == m.gamma_dim + m.latent_dim) return true;
  throw std::invalid_argument("mixture dimension " + std::to_string(S.dim) + " fits neither gamma (" +
                              std::to_string(m.gamma_dim) + ") nor z0||gamma");
}

std::vector<Curve> sample_trajectories(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& z0_source,
                                       const std::vector<double>& times, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  const bool joint = is_joint(m, S);
  const tg::Tensor draws = gmm::sample(S, n, seed);
  const tg::Tensor z0 = joint ? tg::Tensor() : posterior_mean_z0(m, z0_source);
  std::vector<Curve> out(n);
  parallel_for(n, [&](std::size_t k) {
    if (joint) {
      out[k] = generate(m, row_slice(draws, k, 0, m.latent_dim), row_slice(draws, k, m.latent_dim, m.gamma_dim), times);
    } else {
      out[k] = generate(m, z0, row_slice(draws, k, 0, m.gamma_dim), times);
    }
  });
  return out;
}

std::vector<Curve> sample_prior(const FNODEModel& m, const data::Trajectory& z0_source,
                                const std::vector<double>& times, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  Rng rng = make_rng(seed);
  std::vector<tg::Tensor> gammas;
  for (std::size_t k = 0; k < n; ++k) gammas.push_back(tg::Tensor::vector(standard_normals(rng, m.gamma_dim)));
  const tg::Tensor z0 = posterior_mean_z0(m, z0_source);
  std::vector<Curve> out(n);
  parallel_for(n, [&](std::size_t k) { out[k] = generate(m, z0, gammas[k], times); });
  return out;
}

Curve transfer_trajectory(const FNODEModel& m, const data::Trajectory& z0_source, const data::Trajectory& exemplar,
                          const std::vector<double>& times) {
  const tg::Tensor gamma = nets::encode(m.enc_gamma, m.params, exemplar).mean;
  return generate(m, posterior_mean_z0(m, z0_source), gamma, times);
}

Neighborhood neighborhood_sample(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& z0_source,
                                 const data::Trajectory& exemplar, double delta, std::size_t n,
                                 std::size_t max_attempts, const std::vector<double>& times, std::uint64_t seed) {
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  if (n == 0 || max_attempts == 0) throw std::invalid_argument("n and max_attempts must be >= 1");
  const bool joint = is_joint(m, S);
  const std::size_t off = joint ? m.latent_dim : 0;
  const tg::Tensor center = nets::encode(m.enc_gamma, m.params, exemplar).mean;
  const tg::Tensor draws = gmm::sample(S, max_attempts, seed);

  Neighborhood out;
  for (std::size_t a = 0; a < max_attempts && out.gammas.size() < n; ++a) {
    ++out.attempts;
    tg::Tensor g = row_slice(draws, a, off, m.gamma_dim);
    if (euclidean(g, center) <= delta) out.gammas.push_back(std::move(g));
  }
  if (out.gammas.empty()) {
    throw NoAcceptanceError("no draw within delta=" + std::to_string(delta) + " after " +
                                std::to_string(out.attempts) + " attempts (acceptance rate < " +
                                std::to_string(1.0 / static_cast<double>(out.attempts)) + ")",
                            out.attempts);
  }
  for (const auto& g : out.gammas) {
    if (!(euclidean(g, center) <= delta)) throw std::logic_error("accepted draw outside the delta-ball");
  }
  const tg::Tensor z0 = posterior_mean_z0(m, z0_source);
  out.curves.resize(out.gammas.size());
  parallel_for(out.gammas.size(), [&](std::size_t k) { out.curves[k] = generate(m, z0, out.gammas[k], times); });
  return out;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

CredibleBand band_from_curves(const std::vector<Curve>& curves, const std::vector<double>& times, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0,1)");
  if (curves.empty()) throw std::invalid_argument("band needs at least one curve");
  CredibleBand band;
  band.times = times;
  band.level = level;
  band.n_draws = curves.size();
  const double lo_p = 0.5 * (1.0 - level), hi_p = 0.5 * (1.0 + level);
  for (std::size_t t = 0; t < times.size(); ++t) {
    const std::size_t dim = curves.front().at(t).size();
    std::vector<double> lo(dim), mid(dim), hi(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      std::vector<double> v;
      const double ref = curves.front().at(t)[j];
      double s = 0.0;
      for (const auto& c : curves) {
        v.push_back(c.at(t)[j]);
        s += c.at(t)[j] - ref;
      }
      mid[j] = ref + s / static_cast<double>(curves.size());
      lo[j] = std::min(quantile(v, lo_p), mid[j]);
      hi[j] = std::max(quantile(v, hi_p), mid[j]);
    }
    band.lower.push_back(tg::Tensor::vector(std::move(lo)));
    band.mean.push_back(tg::Tensor::vector(std::move(mid)));
    band.upper.push_back(tg::Tensor::vector(std::move(hi)));
  }
  return band;
}

CredibleBand credible_band(const FNODEModel& m, DrawSource source, const gmm::GMMModel* S, const data::Trajectory& x,
                           const std::vector<double>& times, std::size_t n_draws, double level, std::uint64_t seed) {
  if (n_draws < 20) throw std::invalid_argument("credible band needs at least 20 draws");
  if (source == DrawSource::Gmm && !S) throw std::invalid_argument("gmm draw source needs a fitted mixture");
  const auto q_z0 = nets::encode(m.enc_z0, m.params, x);
  const auto q_gamma = nets::encode(m.enc_gamma, m.params, x);
  Rng rng = make_rng(seed);
  std::vector<tg::Tensor> z0s, gammas;
  for (std::size_t k = 0; k < n_draws; ++k) {
    z0s.push_back(reparameterize(q_z0, tg::Tensor::vector(standard_normals(rng, m.latent_dim))));
    if (source == DrawSource::Posterior) {
      gammas.push_back(reparameterize(q_gamma, tg::Tensor::vector(standard_normals(rng, m.gamma_dim))));
    }
  }
  if (source == DrawSource::Gmm) {
    const std::size_t off = is_joint(m, *S) ? m.latent_dim : 0;
    const tg::Tensor draws = gmm::sample(*S, n_draws, mix_seed(seed, 1));
    for (std::size_t k = 0; k < n_draws; ++k) gammas.push_back(row_slice(draws, k, off, m.gamma_dim));
  }
  std::vector<Curve> curves(n_draws);
  parallel_for(n_draws, [&](std::size_t k) { curves[k] = generate(m, z0s[k], gammas[k], times); });
  return band_from_curves(curves, times, level);
}

double band_coverage(const CredibleBand& band, const data::Trajectory& x) {
  if (band.times != x.times) throw std::invalid_argument("band is not evaluated on the trajectory's times");
  std::size_t inside = 0, total = 0;
  for (std::size_t t = 0; t < x.length(); ++t) {
    for (std::size_t j = 0; j < x.values[t].size(); ++j) {
      const double v = x.values[t][j];
      inside += band.lower[t][j] <= v && v <= band.upper[t][j];
      ++total;
    }
  }
  return static_cast<double>(inside) / static_cast<double>(total);
}

std::string band_csv(const CredibleBand& band) {
  std::ostringstream os;
  os.precision(17);
  os << "time,dim,lower,mean,upper\n";
  for (std::size_t t = 0; t < band.times.size(); ++t) {
    for (std::size_t j = 0; j < band.mean[t].size(); ++j) {
      os << band.times[t] << ',' << j + 1 << ',' << band.lower[t][j] << ',' << band.mean[t][j] << ','
         << band.upper[t][j] << '\n';
    }
  }
  return os.str();
}

double ood_score(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& x, std::size_t n_gamma,
                 std::uint64_t seed) {
  if (n_gamma == 0) throw std::invalid_argument("n_gamma must be >= 1");
  const bool joint = is_joint(m, S);
  const gmm::Scorer scorer(S);
  const auto q_gamma = nets::encode(m.enc_gamma, m.params, x);
  nets::GaussianParams q_z0;
  if (joint) q_z0 = nets::encode(m.enc_z0, m.params, x);
  Rng rng = make_rng(seed);
  double total = 0.0;
  for (std::size_t s = 0; s < n_gamma; ++s) {
    std::vector<double> point;
    if (joint) {
      const auto z0 = reparameterize(q_z0, tg::Tensor::vector(standard_normals(rng, m.latent_dim)));
      point = z0.values();
    }
    const auto g = reparameterize(q_gamma, tg::Tensor::vector(standard_normals(rng, m.gamma_dim)));
    point.insert(point.end(), g.values().begin(), g.values().end());
    total += -scorer.log_likelihood(point);
  }
  return total / static_cast<double>(n_gamma);
}

std::vector<double> ood_scores(const FNODEModel& m, const gmm::GMMModel& S, const data::PanelDataset& data,
                               std::size_t n_gamma, std::uint64_t seed) {
  std::vector<double> scores(data.size());
  parallel_for(data.size(),
               [&](std::size_t i) { scores[i] = ood_score(m, S, data.trajectories[i], n_gamma, mix_seed(seed, i)); });
  return scores;
}

double threshold_from_scores(std::vector<double> scores, double q) {
  if (scores.empty()) throw std::invalid_argument("no calibration scores");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("quantile must lie in (0,1]");
  std::sort(scores.begin(), scores.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(scores.size()) - 1e-9));
  return scores[std::clamp<std::size_t>(rank, 1, scores.size()) - 1];
}

double ood_calibrate(const FNODEModel& m, const gmm::GMMModel& S, const data::PanelDataset& train,
                     std::size_t n_gamma, double q, std::uint64_t seed) {
  return threshold_from_scores(ood_scores(m, S, train, n_gamma, seed), q);
}

double OODReport::flag_rate() const {
  if (rows.empty()) return 0.0;
  std::size_t f = 0;
  for (const auto& r : rows) f += r.flagged;
  return static_cast<double>(f) / static_cast<double>(rows.size());
}

OODReport ood_report(const std::vector<double>& scores, const data::PanelDataset& data, double threshold) {
  if (scores.size() != data.size()) throw std::invalid_argument("one score per trajectory expected");
  OODReport rep;
  rep.threshold = threshold;
  std::map<int, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    OODRow r{i, data.trajectories[i].label, scores[i], scores[i] > threshold};
    if (r.label) {
      auto& c = counts[*r.label];
      c.first += r.flagged;
      ++c.second;
    }
    rep.rows.push_back(r);
  }
  for (const auto& [label, c] : counts) {
    rep.class_flag_rate[label] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return rep;
}

OODReport ood_test(const FNODEModel& m, const gmm::GMMModel& S, double threshold, const data::PanelDataset& test,
                   std::size_t n_gamma, std::uint64_t seed) {
  return ood_report(ood_scores(m, S, test, n_gamma, seed), test, threshold);
}

std::string ood_csv(const OODReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "index,label,nll,threshold,flagged\n";
  for (const auto& r : report.rows) {
    os << r.index << ',';
    if (r.label) os << *r.label;
    os << ',' << r.nll << ',' << report.threshold << ',' << (r.flagged ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace fnode::inference
