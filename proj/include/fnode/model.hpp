#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fnode/data.hpp"
#include "fnode/nets.hpp"
#include "fnode/odeint.hpp"

namespace fnode {

// Architecture and likelihood settings used to build a fresh model.
struct ArchConfig {
  std::size_t latent_dim = 8;
  std::size_t gamma_dim = 16;
  std::size_t f_hidden = 100;
  std::size_t f_hidden_layers = 2;  // 2 hidden layers -> 3 affine layers
  std::size_t hyper_hidden = 128;
  std::size_t hyper_hidden_layers = 2;
  std::size_t enc_hidden = 64;
  std::size_t dec_hidden = 64;
  double lambda_init = 0.1;
  double sigma_x = 0.05;
  double t0 = 0.0;
  ode::SolverConfig solver;
};

struct FNODEModel {
  nets::Encoder enc_z0;
  nets::Encoder enc_gamma;
  nets::Hypernetwork hyper;
  nets::MLPSpec f_spec;  // [p+1, ..., p]: the field sees concat(z, t)
  nets::Decoder dec;
  ode::SolverConfig solver;
  double sigma_x = 0.05;
  double t0 = 0.0;  // time at which z0 lives; every rollout starts here
  std::size_t latent_dim = 0;
  std::size_t gamma_dim = 0;
  std::size_t obs_dim = 0;
  tg::ParamSet params;

  void validate() const;
};

FNODEModel make_model(const ArchConfig& arch, std::size_t obs_dim, std::size_t encoder_slots, std::uint64_t seed);

// mean + exp(log_var / 2) * noise
tg::Tensor reparameterize(const nets::GaussianParams& g, const tg::Tensor& noise);
tg::Var reparameterize(const nets::GaussianVars& g, tg::Var noise);

// KL(N(mean, diag(exp(log_var))) || N(0, I))
double kl_gaussian(const nets::GaussianParams& q);
tg::Var kl_gaussian(const nets::GaussianVars& q);

struct NoiseDraw {
  tg::Tensor z0;
  tg::Tensor gamma;
};

NoiseDraw zero_noise(const FNODEModel& m);
NoiseDraw draw_noise(const FNODEModel& m, Rng& rng);

struct ForwardResult {
  std::vector<tg::Tensor> recon;   // one per observation time
  std::vector<tg::Tensor> z_path;  // latent state at each observation time
  tg::Tensor z0;
  tg::Tensor gamma;
  nets::GaussianParams q_z0;
  nets::GaussianParams q_gamma;
};

ForwardResult forward(const FNODEModel& m, const data::Trajectory& x, const NoiseDraw& noise);

// Decoded trajectory for a given (z0, gamma) at the requested times (all >= m.t0).
std::vector<tg::Tensor> generate(const FNODEModel& m, const tg::Tensor& z0, const tg::Tensor& gamma,
                                 const std::vector<double>& times);

// Latent states and decodings for weights theta; nodes live on z0's tape.
struct Rollout {
  std::vector<tg::Var> states;
  std::vector<tg::Var> recon;
};
Rollout rollout(const FNODEModel& m, const tg::ParamVars& dec_params, tg::Var theta, tg::Var z0,
                const std::vector<double>& times);

struct ELBOBreakdown {
  double total = 0.0;
  double recon_loglik = 0.0;
  double kl_z0 = 0.0;
  double kl_gamma = 0.0;
  double kl_weight = 0.0;
};

// Gaussian log-likelihood of x under recon with std sigma_x, summed over times and dims.
double gaussian_loglik(const data::Trajectory& x, std::span<const tg::Tensor> recon, double sigma_x);

// ELBO of one trajectory; recon term averaged over the given draws.
ELBOBreakdown elbo_loss(const FNODEModel& m, const data::Trajectory& x, std::span<const NoiseDraw> draws,
                        double kl_weight);
ELBOBreakdown elbo_loss(const FNODEModel& m, const data::Trajectory& x, int mc_samples, double kl_weight, Rng& rng);

// Mean ELBO over a batch and the gradient of the loss -mean(ELBO) for every
// parameter. draws[i * mc + k] is the k-th draw for batch[i].
struct BatchGradient {
  ELBOBreakdown elbo;
  tg::ParamSet grad;
};

BatchGradient batch_gradient(const FNODEModel& m, std::span<const data::Trajectory* const> batch,
                             std::span<const NoiseDraw> draws, double kl_weight);
// Loss only, for finite-difference checks.
double batch_loss(const FNODEModel& m, std::span<const data::Trajectory* const> batch,
                  std::span<const NoiseDraw> draws, double kl_weight);

// Posterior-mean (noise 0) or single-sample reconstruction at `times`.
std::vector<tg::Tensor> reconstruct(const FNODEModel& m, const data::Trajectory& x, const ode::TimeGrid& times,
                                    bool use_posterior_mean, Rng* rng = nullptr);

}  // namespace fnode
