#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fnode/data.hpp"
#include "fnode/model.hpp"
#include "fnode/tensor.hpp"

namespace fnode::gmm {

enum class CovType { Spherical, Tied, Diag, Full };

// Tie-break order used by select_model.
inline constexpr CovType kAllCovTypes[] = {CovType::Spherical, CovType::Tied, CovType::Diag, CovType::Full};

std::string cov_type_name(CovType t);
CovType parse_cov_type(const std::string& name);

inline constexpr double kCovFloor = 1e-6;

// covariances[k] holds one variance (spherical), d variances (diag) or a
// row-major d x d matrix (full). Tied models keep a single d x d matrix.
struct GMMModel {
  CovType cov_type = CovType::Diag;
  std::size_t dim = 0;
  std::vector<double> weights;
  tg::Tensor means;  // [K, d]
  std::vector<std::vector<double>> covariances;

  std::size_t components() const { return weights.size(); }
  void validate() const;

  friend bool operator==(const GMMModel&, const GMMModel&) = default;
};

// Posterior draws collected from the training set; rows are grouped by source.
struct GammaSampleBank {
  tg::Tensor samples;  // [N * n_gamma, d]
  std::vector<std::size_t> source;
  std::size_t n_gamma = 0;
  bool joint = false;  // rows are z0 || gamma instead of gamma alone

  std::size_t rows() const { return source.size(); }
  std::size_t dim() const { return samples.cols(); }
};

GammaSampleBank collect_gamma_samples(const FNODEModel& m, const data::PanelDataset& data, std::size_t n_gamma,
                                      std::uint64_t seed, bool joint = false);

// Sample bank from raw rows, one source per row.
GammaSampleBank bank_from_rows(const tg::Tensor& rows);

struct EMOptions {
  std::size_t max_iter = 100;
  double tol = 1e-6;  // on the mean per-sample log-likelihood
  std::size_t restarts = 3;
};

struct EMResult {
  GMMModel model;
  std::vector<double> loglik_history;  // total log-likelihood after each E-step
  std::size_t reseeded = 0;            // empty components moved to the worst-fit point
  bool converged = false;
};

EMResult em_fit(const GammaSampleBank& bank, std::size_t K, CovType cov_type, std::uint64_t seed,
                const EMOptions& opt = {});

std::size_t param_count(CovType cov_type, std::size_t K, std::size_t d);
std::size_t param_count(const GMMModel& model);

double total_log_likelihood(const GMMModel& model, const tg::Tensor& rows);
double bic(const GMMModel& model, const GammaSampleBank& bank);

struct SelectionRow {
  std::size_t K = 0;
  CovType cov_type = CovType::Diag;
  double loglik = 0.0;
  std::size_t params = 0;
  double bic = 0.0;
  bool selected = false;
};

struct Selection {
  GMMModel model;
  std::vector<SelectionRow> table;
  std::vector<std::string> failures;
};

Selection select_model(const GammaSampleBank& bank, const std::vector<std::size_t>& components,
                       const std::vector<CovType>& cov_types, std::uint64_t seed, const EMOptions& opt = {});
std::string selection_csv(const std::vector<SelectionRow>& table);

// Cached Cholesky factors for repeated scoring.
class Scorer {
 public:
  explicit Scorer(const GMMModel& model);
  double log_likelihood(std::span<const double> point) const;
  // log N(point; mean_k, cov_k), without the mixture weight.
  double component_log_density(std::size_t k, std::span<const double> point) const;
  std::size_t components() const { return log_weights_.size(); }
  double log_weight(std::size_t k) const { return log_weights_[k]; }

 private:
  std::size_t dim_;
  std::vector<double> log_weights_;
  std::vector<std::vector<double>> means_;
  std::vector<std::vector<double>> chol_;  // row-major lower factor, or per-dim std devs
  std::vector<double> log_det_;
  CovType type_;
};

double log_likelihood(const GMMModel& model, std::span<const double> point);
tg::Tensor sample(const GMMModel& model, std::size_t n, std::uint64_t seed);

}  // namespace fnode::gmm
