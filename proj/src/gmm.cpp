#include "fnode/gmm.hpp"

#define EIGEN_DONT_PARALLELIZE

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "fnode/rng.hpp"

namespace fnode::gmm {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t cov_entries(CovType t, std::size_t d) {
  switch (t) {
    case CovType::Spherical:
      return 1;
    case CovType::Diag:
      return d;
    case CovType::Tied:
    case CovType::Full:
      return d * d;
  }
  return 0;
}

// Lower Cholesky factor of a row-major d x d matrix, or an empty vector if
// the matrix is not positive definite with factor diagonal >= kCovFloor.
std::vector<double> cholesky(const std::vector<double>& cov, std::size_t d) {
  Eigen::Map<const RowMatrix> a(cov.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Eigen::LLT<RowMatrix> llt(a);
  if (llt.info() != Eigen::Success) return {};
  RowMatrix l = llt.matrixL();
  for (std::size_t i = 0; i < d; ++i) {
    if (!(l(i, i) >= kCovFloor)) return {};
  }
  return std::vector<double>(l.data(), l.data() + d * d);
}

// Adds growing diagonal jitter until the Cholesky factor satisfies the floor.
void regularize(std::vector<double>& cov, std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
      cov[i * d + j] = cov[j * d + i] = s;
    }
  }
  if (!cholesky(cov, d).empty()) return;
  double jitter = kCovFloor;
  for (int attempt = 0; attempt < 40; ++attempt, jitter *= 10.0) {
    std::vector<double> c = cov;
    for (std::size_t i = 0; i < d; ++i) c[i * d + i] += jitter;
    if (!cholesky(c, d).empty()) {
      cov = std::move(c);
      return;
    }
  }
  throw std::runtime_error("covariance could not be regularized");
}

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::vector<double> row(const tg::Tensor& t, std::size_t i) {
  const std::size_t d = t.cols();
  return std::vector<double>(t.values().begin() + static_cast<std::ptrdiff_t>(i * d),
                             t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
}

}  // namespace

std::string cov_type_name(CovType t) {
  switch (t) {
    case CovType::Spherical:
      return "spherical";
    case CovType::Tied:
      return "tied";
    case CovType::Diag:
      return "diag";
    case CovType::Full:
      return "full";
  }
  return "?";
}

CovType parse_cov_type(const std::string& name) {
  for (CovType t : kAllCovTypes) {
    if (cov_type_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown covariance type '" + name + "'");
}

void GMMModel::validate() const {
  const std::size_t K = components();
  if (K == 0 || dim == 0) throw std::invalid_argument("mixture needs at least one component and dimension");
  if (means.rank() != 2 || means.rows() != K || means.cols() != dim) {
    throw std::invalid_argument("mixture means must be a [K, d] matrix");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
  const std::size_t n_cov = cov_type == CovType::Tied ? 1 : K;
  if (covariances.size() != n_cov) throw std::invalid_argument("wrong number of covariance blocks");
  for (const auto& c : covariances) {
    if (c.size() != cov_entries(cov_type, dim)) throw std::invalid_argument("covariance block has the wrong size");
    if (cov_type == CovType::Spherical || cov_type == CovType::Diag) {
      for (double v : c) {
        if (!(v >= kCovFloor) || !std::isfinite(v)) throw std::invalid_argument("variance below the floor");
      }
    } else if (cholesky(c, dim).empty()) {
      throw std::invalid_argument("covariance matrix is not positive definite above the floor");
    }
  }
}

Scorer::Scorer(const GMMModel& model) : dim_(model.dim), type_(model.cov_type) {
  model.validate();
  const std::size_t K = model.components();
  for (std::size_t k = 0; k < K; ++k) {
    log_weights_.push_back(std::log(model.weights[k]));
    means_.push_back(row(model.means, k));
    const auto& c = model.covariances[type_ == CovType::Tied ? 0 : k];
    double log_det = 0.0;
    std::vector<double> f;
    if (type_ == CovType::Spherical || type_ == CovType::Diag) {
      f.resize(dim_);
      for (std::size_t j = 0; j < dim_; ++j) {
        f[j] = std::sqrt(type_ == CovType::Spherical ? c[0] : c[j]);
        log_det += 2.0 * std::log(f[j]);
      }
    } else {
      f = cholesky(c, dim_);
      for (std::size_t j = 0; j < dim_; ++j) log_det += 2.0 * std::log(f[j * dim_ + j]);
    }
    chol_.push_back(std::move(f));
    log_det_.push_back(log_det);
  }
}

double Scorer::component_log_density(std::size_t k, std::span<const double> x) const {
  if (x.size() != dim_) throw std::invalid_argument("point width differs from the mixture dimension");
  const auto& mu = means_[k];
  const auto& f = chol_[k];
  double maha = 0.0;
  if (type_ == CovType::Spherical || type_ == CovType::Diag) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double u = (x[j] - mu[j]) / f[j];
      maha += u * u;
    }
  } else {
    double y[64];
    std::vector<double> heap;
    double* yp = y;
    if (dim_ > 64) {
      heap.resize(dim_);
      yp = heap.data();
    }
    for (std::size_t i = 0; i < dim_; ++i) {
      double s = x[i] - mu[i];
      for (std::size_t j = 0; j < i; ++j) s -= f[i * dim_ + j] * yp[j];
      yp[i] = s / f[i * dim_ + i];
      maha += yp[i] * yp[i];
    }
  }
  return -0.5 * (static_cast<double>(dim_) * kLog2Pi + log_det_[k] + maha);
}

double Scorer::log_likelihood(std::span<const double> point) const {
  std::vector<double> lp(components());
  for (std::size_t k = 0; k < lp.size(); ++k) lp[k] = log_weights_[k] + component_log_density(k, point);
  return log_sum_exp(lp);
}

double log_likelihood(const GMMModel& model, std::span<const double> point) {
  return Scorer(model).log_likelihood(point);
}

double total_log_likelihood(const GMMModel& model, const tg::Tensor& rows) {
  const Scorer s(model);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) total += s.log_likelihood(row(rows, i));
  return total;
}

std::size_t param_count(CovType cov_type, std::size_t K, std::size_t d) {
  std::size_t cov = 0;
  switch (cov_type) {
    case CovType::Spherical:
      cov = K;
      break;
    case CovType::Diag:
      cov = K * d;
      break;
    case CovType::Tied:
      cov = d * (d + 1) / 2;
      break;
    case CovType::Full:
      cov = K * d * (d + 1) / 2;
      break;
  }
  return K * d + (K - 1) + cov;
}

std::size_t param_count(const GMMModel& model) { return param_count(model.cov_type, model.components(), model.dim); }

double bic(const GMMModel& model, const GammaSampleBank& bank) {
  if (bank.rows() == 0) throw std::invalid_argument("bic needs a non-empty bank");
  return -2.0 * total_log_likelihood(model, bank.samples) +
         static_cast<double>(param_count(model)) * std::log(static_cast<double>(bank.rows()));
}

GammaSampleBank collect_gamma_samples(const FNODEModel& m, const data::PanelDataset& data, std::size_t n_gamma,
                                      std::uint64_t seed, bool joint) {
  if (n_gamma == 0) throw std::invalid_argument("n_gamma must be >= 1");
  const std::size_t d = m.gamma_dim + (joint ? m.latent_dim : 0);
  std::vector<double> flat;
  flat.reserve(data.size() * n_gamma * d);
  GammaSampleBank bank;
  bank.n_gamma = n_gamma;
  bank.joint = joint;
  for (std::size_t j = 0; j < data.size(); ++j) {
    const auto& x = data.trajectories[j];
    const auto q_gamma = nets::encode(m.enc_gamma, m.params, x);
    nets::GaussianParams q_z0;
    if (joint) q_z0 = nets::encode(m.enc_z0, m.params, x);
    Rng rng = make_rng(seed, j);
    for (std::size_t s = 0; s < n_gamma; ++s) {
      if (joint) {
        const auto z0 = reparameterize(q_z0, tg::Tensor::vector(standard_normals(rng, m.latent_dim)));
        flat.insert(flat.end(), z0.values().begin(), z0.values().end());
      }
      const auto g = reparameterize(q_gamma, tg::Tensor::vector(standard_normals(rng, m.gamma_dim)));
      flat.insert(flat.end(), g.values().begin(), g.values().end());
      bank.source.push_back(j);
    }
  }
  bank.samples = tg::Tensor::matrix(bank.source.size(), d, std::move(flat));
  return bank;
}

GammaSampleBank bank_from_rows(const tg::Tensor& rows) {
  if (rows.rank() != 2) throw std::invalid_argument("bank rows must be a matrix");
  GammaSampleBank bank;
  bank.samples = rows;
  bank.n_gamma = 1;
  bank.source.resize(rows.rows());
  std::iota(bank.source.begin(), bank.source.end(), 0);
  return bank;
}

namespace {

struct Fitter {
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;
  static constexpr Eigen::Index kBlock = 512;

  Matrix x;  // n x d, rows sorted, shifted by -offset
  Eigen::RowVectorXd offset;
  std::size_t n = 0, d = 0, K = 0;
  CovType type = CovType::Diag;
  std::vector<double> global_cov;  // in the layout of `type`

  GMMModel model;
  Matrix resp;      // n x K
  Vector point_ll;  // n
  std::size_t reseeded = 0;

  Eigen::Index N() const { return static_cast<Eigen::Index>(n); }
  Eigen::Index D() const { return static_cast<Eigen::Index>(d); }

  void set_data(const std::vector<std::vector<double>>& rows) {
    x.resize(N(), D());
    for (Eigen::Index i = 0; i < N(); ++i)
      for (Eigen::Index j = 0; j < D(); ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    offset = x.colwise().mean();
    x.rowwise() -= offset;
    const Matrix full = x.transpose() * x / static_cast<double>(n);
    global_cov = finish_cov(to_row_major(full));
  }

  std::vector<double> to_row_major(const Matrix& m) const {
    std::vector<double> out(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
  }

  // Converts a full d x d covariance to the layout of `type`, with floors applied.
  std::vector<double> finish_cov(const std::vector<double>& full) const {
    if (type == CovType::Diag) {
      std::vector<double> c(d);
      for (std::size_t j = 0; j < d; ++j) c[j] = std::max(full[j * d + j], kCovFloor);
      return c;
    }
    if (type == CovType::Spherical) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += full[j * d + j];
      return {std::max(s / static_cast<double>(d), kCovFloor)};
    }
    std::vector<double> c = full;
    regularize(c, d);
    return c;
  }

  void m_step() {
    const double total_n = static_cast<double>(n);
    const Eigen::Index Kn = static_cast<Eigen::Index>(K);
    const Vector nk = resp.colwise().sum().transpose();

    std::vector<bool> empty(K, false);
    for (std::size_t k = 0; k < K; ++k) empty[k] = !(nk(static_cast<Eigen::Index>(k)) > 1e-10 * total_n);

    Matrix means = resp.transpose() * x;  // K x d, shifted coordinates
    for (Eigen::Index k = 0; k < Kn; ++k)
      if (!empty[static_cast<std::size_t>(k)]) means.row(k) /= nk(k);

    const bool matrix = type == CovType::Tied || type == CovType::Full;
    // Second moments about the shifted origin, then about each mean.
    Matrix second;  // matrix: d x (K*d); otherwise d x K
    if (matrix) {
      second = Matrix::Zero(D(), Kn * D());
      Matrix w;
      for (Eigen::Index b = 0; b < N(); b += kBlock) {
        const Eigen::Index rows = std::min(kBlock, N() - b);
        const auto xb = x.middleRows(b, rows);
        w.resize(rows, Kn * D());
        for (Eigen::Index k = 0; k < Kn; ++k)
          w.middleCols(k * D(), D()) = xb.array().colwise() * resp.col(k).segment(b, rows).array();
        second.noalias() += xb.transpose() * w;
      }
    } else {
      second = x.array().square().matrix().transpose() * resp;
    }

    GMMModel next;
    next.cov_type = type;
    next.dim = d;
    next.weights.resize(K);
    auto scatter = [&](Eigen::Index k) -> Matrix {
      return second.middleCols(k * D(), D()) - nk(k) * means.row(k).transpose() * means.row(k);
    };
    if (type == CovType::Tied) {
      Matrix pooled = Matrix::Zero(D(), D());
      for (Eigen::Index k = 0; k < Kn; ++k)
        if (!empty[static_cast<std::size_t>(k)]) pooled += scatter(k);
      pooled /= total_n;
      next.covariances.push_back(finish_cov(to_row_major(pooled)));
    }
    std::vector<double> flat_means(K * d);
    std::vector<std::size_t> taken;
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (empty[k]) {
        const std::size_t w = worst_point(taken);
        taken.push_back(w);
        for (std::size_t j = 0; j < d; ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          flat_means[k * d + j] = x(static_cast<Eigen::Index>(w), jj) + offset(jj);
        }
        next.weights[k] = 1.0 / total_n;
        if (type != CovType::Tied) next.covariances.push_back(global_cov);
        ++reseeded;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        flat_means[k * d + j] = means(kk, jj) + offset(jj);
      }
      next.weights[k] = nk(kk) / total_n;
      if (type == CovType::Tied) continue;
      if (type == CovType::Full) {
        next.covariances.push_back(finish_cov(to_row_major(scatter(kk) / nk(kk))));
      } else {
        std::vector<double> c(d);
        for (std::size_t j = 0; j < d; ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          c[j] = std::max(0.0, second(jj, kk) / nk(kk) - means(kk, jj) * means(kk, jj));
        }
        if (type == CovType::Diag) {
          for (auto& v : c) v = std::max(v, kCovFloor);
          next.covariances.push_back(std::move(c));
        } else {
          double s = 0.0;
          for (double v : c) s += v;
          next.covariances.push_back({std::max(s / static_cast<double>(d), kCovFloor)});
        }
      }
    }
    double wsum = 0.0;
    for (double w : next.weights) wsum += w;
    for (auto& w : next.weights) w /= wsum;
    next.means = tg::Tensor::matrix(K, d, std::move(flat_means));
    model = std::move(next);
  }

  std::size_t worst_point(const std::vector<std::size_t>& taken) const {
    std::size_t best = n;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(taken.begin(), taken.end(), i) != taken.end()) continue;
      if (point_ll(static_cast<Eigen::Index>(i)) < worst) {
        worst = point_ll(static_cast<Eigen::Index>(i));
        best = i;
      }
    }
    return best == n ? 0 : best;
  }

  // Squared Mahalanobis distances, n x K.
  Matrix mahalanobis(std::vector<double>& log_det) const {
    const Eigen::Index Kn = static_cast<Eigen::Index>(K);
    Matrix mu(Kn, D());  // shifted means
    for (Eigen::Index k = 0; k < Kn; ++k)
      for (Eigen::Index j = 0; j < D(); ++j) mu(k, j) = model.means.at(static_cast<std::size_t>(k), static_cast<std::size_t>(j)) - offset(j);
    log_det.assign(K, 0.0);
    Matrix maha(N(), Kn);
    if (type == CovType::Spherical || type == CovType::Diag) {
      Matrix iv(D(), Kn);
      for (Eigen::Index k = 0; k < Kn; ++k) {
        const auto& c = model.covariances[static_cast<std::size_t>(k)];
        for (Eigen::Index j = 0; j < D(); ++j) {
          const double v = type == CovType::Spherical ? c[0] : c[static_cast<std::size_t>(j)];
          iv(j, k) = 1.0 / v;
          log_det[static_cast<std::size_t>(k)] += std::log(v);
        }
      }
      const Matrix mu_iv = (mu.transpose().array() * iv.array()).matrix();  // d x K
      const Eigen::RowVectorXd c0 = (mu.transpose().array() * mu_iv.array()).colwise().sum();
      maha.noalias() = x.array().square().matrix() * iv;
      maha.noalias() -= 2.0 * x * mu_iv;
      maha.rowwise() += c0;
      maha = maha.cwiseMax(0.0);
      return maha;
    }
    const std::size_t blocks = type == CovType::Tied ? 1 : K;
    Matrix B(D(), static_cast<Eigen::Index>(blocks) * D());  // stacked L_k^-T
    for (std::size_t k = 0; k < blocks; ++k) {
      const std::vector<double> f = cholesky(model.covariances[k], d);
      if (f.empty()) throw std::runtime_error("covariance lost positive definiteness during EM");
      Eigen::Map<const RowMatrix> L(f.data(), D(), D());
      double ld = 0.0;
      for (Eigen::Index j = 0; j < D(); ++j) ld += 2.0 * std::log(L(j, j));
      for (std::size_t c = 0; c < (type == CovType::Tied ? K : 1); ++c) log_det[k + c] = ld;
      B.middleCols(static_cast<Eigen::Index>(k) * D(), D()) =
          L.triangularView<Eigen::Lower>().solve(Matrix::Identity(D(), D())).transpose();
    }
    Matrix offsets(Kn, D());  // mu_k L_k^-T
    for (Eigen::Index k = 0; k < Kn; ++k) {
      const Eigen::Index blk = type == CovType::Tied ? 0 : k;
      offsets.row(k) = mu.row(k) * B.middleCols(blk * D(), D());
    }
    Matrix z;
    for (Eigen::Index b = 0; b < N(); b += kBlock) {
      const Eigen::Index rows = std::min(kBlock, N() - b);
      z.noalias() = x.middleRows(b, rows) * B;
      for (Eigen::Index k = 0; k < Kn; ++k) {
        const Eigen::Index blk = type == CovType::Tied ? 0 : k;
        maha.col(k).segment(b, rows) = (z.middleCols(blk * D(), D()).rowwise() - offsets.row(k)).rowwise().squaredNorm();
      }
    }
    return maha;
  }

  double e_step() {
    std::vector<double> log_det;
    const Matrix maha = mahalanobis(log_det);
    Eigen::RowVectorXd bias(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      bias(static_cast<Eigen::Index>(k)) = std::log(model.weights[k]) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det[k]);
    }
    Matrix lp = -0.5 * maha;
    lp.rowwise() += bias;
    const Vector mx = lp.rowwise().maxCoeff();
    const Eigen::ArrayXXd e = (lp.colwise() - mx).array().exp();
    const Eigen::ArrayXd s = e.rowwise().sum();
    point_ll = mx.array() + s.log();
    resp = (e.colwise() / s).matrix();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += point_ll(static_cast<Eigen::Index>(i));
    return total;
  }

  double dist2(std::size_t i, std::size_t j) const {
    return (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm();
  }

  void init_kmeanspp(Rng& rng) {
    std::vector<std::size_t> centers;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers.push_back(pick(rng));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centers.size() < K) {
      for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2(i, centers.back()));
      std::discrete_distribution<std::size_t> next(d2.begin(), d2.end());
      centers.push_back(next(rng));
    }
    resp.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        const double s = dist2(i, centers[k]);
        if (s < bd) {
          bd = s;
          best = k;
        }
      }
      resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best)) = 1.0;
      point_ll(static_cast<Eigen::Index>(i)) = -bd;
    }
  }
};

}  // namespace

EMResult em_fit(const GammaSampleBank& bank, std::size_t K, CovType cov_type, std::uint64_t seed,
                const EMOptions& opt) {
  const std::size_t n = bank.rows();
  if (K == 0) throw std::invalid_argument("K must be >= 1");
  if (K > n) {
    throw std::invalid_argument("K = " + std::to_string(K) + " exceeds the " + std::to_string(n) + " bank rows");
  }
  if (opt.max_iter == 0 || opt.restarts == 0) throw std::invalid_argument("max_iter and restarts must be >= 1");

  Fitter base;
  base.n = n;
  base.d = bank.dim();
  base.K = K;
  base.type = cov_type;
  // Fixed row order makes every fit independent of how the bank was ordered.
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(row(bank.samples, i));
  std::sort(rows.begin(), rows.end());
  std::size_t n_distinct = n == 0 ? 0 : 1;
  for (std::size_t i = 1; i < n; ++i) n_distinct += rows[i] != rows[i - 1];
  base.set_data(rows);

  EMResult best;
  bool have = false;
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    Fitter f = base;
    f.resp = Fitter::Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
    f.point_ll = Fitter::Vector::Zero(static_cast<Eigen::Index>(n));
    Rng rng = make_rng(seed, r);
    f.init_kmeanspp(rng);
    f.m_step();
    EMResult res;
    double prev = 0.0;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
      const double ll = f.e_step();
      res.loglik_history.push_back(ll);
      if (it > 0 && (ll - prev) / static_cast<double>(n) < opt.tol) {
        res.converged = true;
        break;
      }
      prev = ll;
      if (it + 1 == opt.max_iter) break;
      f.m_step();
    }
    res.model = f.model;
    res.reseeded = f.reseeded;
    if (!have || res.loglik_history.back() > best.loglik_history.back()) {
      best = std::move(res);
      have = true;
    }
  }
  return best;
}

Selection select_model(const GammaSampleBank& bank, const std::vector<std::size_t>& components,
                       const std::vector<CovType>& cov_types, std::uint64_t seed, const EMOptions& opt) {
  if (components.empty() || cov_types.empty()) throw std::invalid_argument("component range and covariance types must be non-empty");
  for (std::size_t K : components) {
    if (K == 0 || K > bank.rows()) throw std::invalid_argument("component count " + std::to_string(K) + " is out of range");
  }
  struct Job {
    std::size_t K;
    CovType type;
  };
  std::vector<Job> jobs;
  for (std::size_t K : components)
    for (CovType t : cov_types) jobs.push_back({K, t});

  std::vector<std::optional<GMMModel>> fitted(jobs.size());
  std::vector<SelectionRow> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
  const double log_n = std::log(static_cast<double>(bank.rows()));
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    try {
      auto res = em_fit(bank, jobs[i].K, jobs[i].type, seed, opt);
      rows[i].K = jobs[i].K;
      rows[i].cov_type = jobs[i].type;
      rows[i].loglik = res.loglik_history.back();
      rows[i].params = param_count(res.model);
      rows[i].bic = -2.0 * rows[i].loglik + static_cast<double>(rows[i].params) * log_n;
      fitted[i] = std::move(res.model);
    } catch (const std::exception& e) {
      errors[i] = "K=" + std::to_string(jobs[i].K) + " " + cov_type_name(jobs[i].type) + ": " + e.what();
    }
  }

  auto order = [](CovType t) { return std::find(std::begin(kAllCovTypes), std::end(kAllCovTypes), t) - std::begin(kAllCovTypes); };
  Selection out;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!fitted[i]) {
      out.failures.push_back(errors[i]);
      continue;
    }
    out.table.push_back(rows[i]);
    if (!best) {
      best = i;
      continue;
    }
    const auto& a = rows[i];
    const auto& b = rows[*best];
    if (a.bic < b.bic || (a.bic == b.bic && (a.params < b.params || (a.params == b.params && order(a.cov_type) < order(b.cov_type))))) {
      best = i;
    }
  }
  if (!best) {
    std::string msg = "every mixture fit failed:";
    for (const auto& e : out.failures) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
  out.model = *fitted[*best];
  for (auto& r : out.table) r.selected = r.K == rows[*best].K && r.cov_type == rows[*best].cov_type;
  return out;
}

std::string selection_csv(const std::vector<SelectionRow>& table) {
  std::ostringstream os;
  os.precision(17);
  os << "K,cov_type,loglik,params,bic,selected\n";
  for (const auto& r : table) {
    os << r.K << ',' << cov_type_name(r.cov_type) << ',' << r.loglik << ',' << r.params << ',' << r.bic << ','
       << (r.selected ? 1 : 0) << '\n';
  }
  return os.str();
}

tg::Tensor sample(const GMMModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  model.validate();
  const std::size_t d = model.dim;
  std::vector<std::vector<double>> factors;
  for (const auto& c : model.covariances) {
    if (model.cov_type == CovType::Spherical || model.cov_type == CovType::Diag) {
      std::vector<double> f(d);
      for (std::size_t j = 0; j < d; ++j) f[j] = std::sqrt(model.cov_type == CovType::Spherical ? c[0] : c[j]);
      factors.push_back(std::move(f));
    } else {
      factors.push_back(cholesky(c, d));
    }
  }
  Rng rng = make_rng(seed);
  std::discrete_distribution<std::size_t> pick(model.weights.begin(), model.weights.end());
  std::vector<double> out;
  out.reserve(n * d);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = pick(rng);
    const auto z = standard_normals(rng, d);
    const auto& f = factors[model.cov_type == CovType::Tied ? 0 : k];
    for (std::size_t i = 0; i < d; ++i) {
      double v = model.means.at(k, i);
      if (model.cov_type == CovType::Spherical || model.cov_type == CovType::Diag) {
        v += f[i] * z[i];
      } else {
        for (std::size_t j = 0; j <= i; ++j) v += f[i * d + j] * z[j];
      }
      out.push_back(v);
    }
  }
  return tg::Tensor::matrix(n, d, std::move(out));
}

}  // namespace fnode::gmm
