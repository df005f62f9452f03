#include "fnode/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fnode {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (kl_anneal_epochs <= 0) throw std::invalid_argument("kl_anneal_epochs must be positive");
  if (epochs > 0 && kl_anneal_epochs > epochs) throw std::invalid_argument("kl_anneal_epochs must not exceed epochs");
  if (mc_samples <= 0) throw std::invalid_argument("mc_samples must be positive");
}

double kl_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  return std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(cfg.kl_anneal_epochs));
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(tg::ParamSet& params, const tg::ParamSet& grads) {
  if (m_.empty()) {
    m_.assign(params.total_size(), 0.0);
    v_.assign(params.total_size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  std::size_t off = 0;
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& [name, p] = params.entry(e);
    const auto& g = grads.get(name);
    auto pd = p.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      double& m = m_[off + i];
      double& v = v_[off + i];
      m = b1_ * m + (1.0 - b1_) * g[i];
      v = b2_ * v + (1.0 - b2_) * g[i] * g[i];
      pd[i] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
    off += pd.size();
  }
}

FitResult fit(FNODEModel model, const data::PanelDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (data.obs_dim != model.obs_dim) throw std::invalid_argument("dataset observation width differs from the model");

  FitResult result{std::move(model), {}};
  FNODEModel& m = result.model;
  Adam opt(cfg.learning_rate);
  Rng rng = make_rng(cfg.seed, 0x7261696eULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double w = kl_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    ELBOBreakdown acc;
    acc.kl_weight = w;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<const data::Trajectory*> batch;
      std::vector<NoiseDraw> draws;
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(&data.trajectories[order[j]]);
        for (int k = 0; k < cfg.mc_samples; ++k) draws.push_back(draw_noise(m, rng));
      }
      BatchGradient bg;
      try {
        bg = batch_gradient(m, batch, draws, w);
      } catch (const ode::BlowUpError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index) + ": " + e.what(),
                              epoch, batch_index);
      } catch (const tg::NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index) + ": " + e.what(),
                              epoch, batch_index);
      }
      const double share = static_cast<double>(end - start) / static_cast<double>(order.size());
      acc.total += share * bg.elbo.total;
      acc.recon_loglik += share * bg.elbo.recon_loglik;
      acc.kl_z0 += share * bg.elbo.kl_z0;
      acc.kl_gamma += share * bg.elbo.kl_gamma;
      opt.step(m.params, bg.grad);
      for (const auto& [name, p] : m.params) {
        if (!p.all_finite()) {
          throw DivergenceError("non-finite parameter " + name + " after epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index),
                                epoch, batch_index);
        }
      }
    }
    result.history.push_back(acc);
    if (on_epoch) on_epoch(epoch, acc);
  }
  return result;
}

}  // namespace fnode
