#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fnode/data.hpp"
#include "fnode/gmm.hpp"
#include "fnode/model.hpp"

namespace fnode::inference {

// A decoded trajectory: one observation-space tensor per requested time.
using Curve = std::vector<tg::Tensor>;

// True when S was fit on z0 || gamma rows rather than gamma alone.
bool is_joint(const FNODEModel& m, const gmm::GMMModel& S);

// z0 is the posterior mean of z0_source and gamma^(k) ~ S. A joint S supplies
// z0 as well, and z0_source is then ignored.
std::vector<Curve> sample_trajectories(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& z0_source,
                                       const std::vector<double>& times, std::size_t n, std::uint64_t seed);

// Baseline: gamma drawn from the N(0, I) prior instead of S.
std::vector<Curve> sample_prior(const FNODEModel& m, const data::Trajectory& z0_source,
                                const std::vector<double>& times, std::size_t n, std::uint64_t seed);

// z0 from the donor, gamma from the exemplar, both posterior means.
Curve transfer_trajectory(const FNODEModel& m, const data::Trajectory& z0_source, const data::Trajectory& exemplar,
                          const std::vector<double>& times);

struct Neighborhood {
  std::vector<tg::Tensor> gammas;
  std::vector<Curve> curves;
  std::size_t attempts = 0;
  double acceptance_rate() const {
    return attempts == 0 ? 0.0 : static_cast<double>(gammas.size()) / static_cast<double>(attempts);
  }
};

class NoAcceptanceError : public std::runtime_error {
 public:
  NoAcceptanceError(const std::string& msg, std::size_t attempts) : std::runtime_error(msg), attempts_(attempts) {}
  std::size_t attempts() const { return attempts_; }

 private:
  std::size_t attempts_;
};

// Rejection sampling from S inside the Euclidean delta-ball around the
// exemplar's posterior-mean gamma; curves start from z0_source's posterior mean.
Neighborhood neighborhood_sample(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& z0_source,
                                 const data::Trajectory& exemplar, double delta, std::size_t n,
                                 std::size_t max_attempts, const std::vector<double>& times, std::uint64_t seed);

enum class DrawSource { Posterior, Gmm };

struct CredibleBand {
  std::vector<double> times;
  std::vector<tg::Tensor> lower, mean, upper;
  double level = 0.95;
  std::size_t n_draws = 0;
};

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double p);

// Per-time, per-dimension band over already decoded curves.
CredibleBand band_from_curves(const std::vector<Curve>& curves, const std::vector<double>& times, double level);

// Draws z0 from x's posterior and gamma from the posterior or from S.
CredibleBand credible_band(const FNODEModel& m, DrawSource source, const gmm::GMMModel* S, const data::Trajectory& x,
                           const std::vector<double>& times, std::size_t n_draws, double level, std::uint64_t seed);

// Fraction of x's observed values inside the band; the band must be on x's times.
double band_coverage(const CredibleBand& band, const data::Trajectory& x);

std::string band_csv(const CredibleBand& band);

// Mean over n_gamma posterior draws of -log S(gamma).
double ood_score(const FNODEModel& m, const gmm::GMMModel& S, const data::Trajectory& x, std::size_t n_gamma,
                 std::uint64_t seed);
std::vector<double> ood_scores(const FNODEModel& m, const gmm::GMMModel& S, const data::PanelDataset& data,
                               std::size_t n_gamma, std::uint64_t seed);

// Order statistic ceil(q * N) of the training scores.
double threshold_from_scores(std::vector<double> scores, double q);
double ood_calibrate(const FNODEModel& m, const gmm::GMMModel& S, const data::PanelDataset& train,
                     std::size_t n_gamma, double q, std::uint64_t seed);

struct OODRow {
  std::size_t index = 0;
  std::optional<int> label;
  double nll = 0.0;
  bool flagged = false;
};

struct OODReport {
  std::vector<OODRow> rows;
  double threshold = 0.0;
  std::map<int, double> class_flag_rate;  // only for labelled rows

  double flag_rate() const;
};

OODReport ood_report(const std::vector<double>& scores, const data::PanelDataset& data, double threshold);
OODReport ood_test(const FNODEModel& m, const gmm::GMMModel& S, double threshold, const data::PanelDataset& test,
                   std::size_t n_gamma, std::uint64_t seed);
std::string ood_csv(const OODReport& report);

}  // namespace fnode::inference
