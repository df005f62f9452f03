#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fnode/model.hpp"

namespace fnode {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 50;
  double learning_rate = 1e-3;
  int kl_anneal_epochs = 50;
  std::uint64_t seed = 0;
  int mc_samples = 1;

  // epochs may be 0 (no-op fit); everything else must be positive.
  void validate() const;
};

// Linear ramp min(1, (epoch+1)/kl_anneal_epochs).
double kl_schedule(int epoch, const TrainConfig& cfg);

// Adaptive moment estimation over a ParamSet, updating in place.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(tg::ParamSet& params, const tg::ParamSet& grads);
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, int epoch, int batch)
      : std::runtime_error(msg), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_, batch_;
};

struct FitResult {
  FNODEModel model;
  std::vector<ELBOBreakdown> history;  // per-epoch mean over training batches
};

using EpochCallback = std::function<void(int epoch, const ELBOBreakdown&)>;

// Mini-batch Adam on -ELBO with the annealed KL weight. Deterministic given
// cfg.seed. On divergence throws DivergenceError; `history` in the callback
// has already seen every completed epoch.
FitResult fit(FNODEModel model, const data::PanelDataset& data, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace fnode
