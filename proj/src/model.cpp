#include "fnode/model.hpp"

#include <cmath>
#include <exception>
#include <numbers>
#include <stdexcept>

namespace fnode {

using tg::Tensor;
using tg::Var;

void FNODEModel::validate() const {
  f_spec.validate();
  hyper.body.validate();
  if (hyper.body.output_width() != f_spec.weight_count()) {
    throw std::invalid_argument("hypernetwork output width " + std::to_string(hyper.body.output_width()) +
                                " != field weight count " + std::to_string(f_spec.weight_count()));
  }
  if (f_spec.input_width() != latent_dim + 1 || f_spec.output_width() != latent_dim) {
    throw std::invalid_argument("field network must map latent_dim+1 -> latent_dim");
  }
  if (hyper.body.input_width() != gamma_dim) throw std::invalid_argument("hypernetwork input must be gamma_dim wide");
  if (enc_z0.out_dim() != latent_dim || enc_gamma.out_dim() != gamma_dim) {
    throw std::invalid_argument("encoder output widths disagree with latent/gamma dims");
  }
  if (dec.spec.input_width() != latent_dim || dec.spec.output_width() != obs_dim) {
    throw std::invalid_argument("decoder must map latent_dim -> obs_dim");
  }
  if (!(sigma_x > 0.0)) throw std::invalid_argument("sigma_x must be > 0");
  solver.validate();
}

FNODEModel make_model(const ArchConfig& arch, std::size_t obs_dim, std::size_t encoder_slots, std::uint64_t seed) {
  FNODEModel m;
  m.latent_dim = arch.latent_dim;
  m.gamma_dim = arch.gamma_dim;
  m.obs_dim = obs_dim;
  m.sigma_x = arch.sigma_x;
  m.t0 = arch.t0;
  m.solver = arch.solver;

  const std::size_t enc_in = encoder_slots * (obs_dim + 2);
  m.enc_z0 = {{{enc_in, arch.enc_hidden, arch.enc_hidden, 2 * arch.latent_dim}}, "enc_z0", encoder_slots, obs_dim};
  m.enc_gamma = {{{enc_in, arch.enc_hidden, arch.enc_hidden, 2 * arch.gamma_dim}}, "enc_gamma", encoder_slots, obs_dim};

  m.f_spec.layer_widths = {arch.latent_dim + 1};
  for (std::size_t i = 0; i < arch.f_hidden_layers; ++i) m.f_spec.layer_widths.push_back(arch.f_hidden);
  m.f_spec.layer_widths.push_back(arch.latent_dim);

  m.hyper.body.layer_widths = {arch.gamma_dim};
  for (std::size_t i = 0; i < arch.hyper_hidden_layers; ++i) m.hyper.body.layer_widths.push_back(arch.hyper_hidden);
  m.hyper.body.layer_widths.push_back(m.f_spec.weight_count());
  m.hyper.body.final_activation = nets::Activation::Tanh;

  m.dec.spec.layer_widths = {arch.latent_dim, arch.dec_hidden, obs_dim};

  Rng rng = make_rng(seed);
  nets::init_mlp(m.params, m.enc_z0.prefix, m.enc_z0.spec, rng);
  nets::init_mlp(m.params, m.enc_gamma.prefix, m.enc_gamma.spec, rng);
  m.hyper.init(m.params, rng, arch.lambda_init);
  nets::init_mlp(m.params, m.dec.prefix, m.dec.spec, rng);
  m.validate();
  return m;
}

Tensor reparameterize(const nets::GaussianParams& g, const Tensor& noise) {
  if (noise.size() != g.dim()) throw std::invalid_argument("noise width does not match the Gaussian");
  Tensor out(g.mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
  return out;
}

Var reparameterize(const nets::GaussianVars& g, Var noise) {
  tg::Tape& t = *g.mean.tape;
  return t.add(g.mean, t.mul(t.exp(t.scale(g.log_var, 0.5)), noise));
}

double kl_gaussian(const nets::GaussianParams& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    kl += std::exp(q.log_var[i]) + q.mean[i] * q.mean[i] - 1.0 - q.log_var[i];
  }
  return 0.5 * kl;
}

Var kl_gaussian(const nets::GaussianVars& q) {
  tg::Tape& t = *q.mean.tape;
  const Var ones = t.constant(Tensor::vector(std::vector<double>(q.mean.size(), 1.0)));
  const Var terms = t.sub(t.sub(t.add(t.exp(q.log_var), t.square(q.mean)), ones), q.log_var);
  return t.scale(t.sum(terms), 0.5);
}

NoiseDraw zero_noise(const FNODEModel& m) { return {Tensor({m.latent_dim}), Tensor({m.gamma_dim})}; }

NoiseDraw draw_noise(const FNODEModel& m, Rng& rng) {
  auto z = standard_normals(rng, m.latent_dim);
  auto g = standard_normals(rng, m.gamma_dim);
  return {Tensor::vector(std::move(z)), Tensor::vector(std::move(g))};
}

namespace {

// Integration grid starting at t0 and the grid index of every requested time.
struct Grid {
  ode::TimeGrid grid;
  std::size_t first_obs;
};

Grid make_grid(double t0, const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("no times to evaluate");
  if (times.front() < t0) {
    throw std::invalid_argument("time " + std::to_string(times.front()) + " precedes the model origin t0=" +
                                std::to_string(t0));
  }
  if (times.front() == t0) return {ode::TimeGrid(times), 0};
  std::vector<double> g{t0};
  g.insert(g.end(), times.begin(), times.end());
  return {ode::TimeGrid(std::move(g)), 1};
}

std::vector<double> flat_values(const data::Trajectory& x) {
  std::vector<double> v;
  for (const auto& row : x.values) v.insert(v.end(), row.begin(), row.end());
  return v;
}

double loglik_norm(double sigma_x) { return std::log(sigma_x * std::sqrt(2.0 * std::numbers::pi)); }

}  // namespace

Rollout rollout(const FNODEModel& m, const tg::ParamVars& dec_params, Var theta, Var z0,
                const std::vector<double>& times) {
  tg::Tape& tape = *z0.tape;
  const Grid g = make_grid(m.t0, times);
  const nets::FunctionalMLP field_net(m.f_spec, theta);
  const ode::VectorField field = [&](Var z, double t) {
    const Var tv = tape.constant(Tensor::vector({t}));
    const Var parts[] = {z, tv};
    return field_net(tape.concat(parts));
  };
  auto states = ode::integrate(field, z0, g.grid, m.solver);
  Rollout out;
  for (std::size_t i = g.first_obs; i < states.size(); ++i) {
    out.states.push_back(states[i]);
    out.recon.push_back(nets::decode(m.dec, dec_params, states[i]));
  }
  return out;
}

std::vector<Tensor> generate(const FNODEModel& m, const Tensor& z0, const Tensor& gamma,
                             const std::vector<double>& times) {
  const nets::WeightVector theta = nets::hypernet_map(m.hyper, m.params, gamma);
  tg::Tape tape;
  const tg::ParamVars dec(tape, m.params, m.dec.prefix + ".");
  const Rollout r = rollout(m, dec, tape.constant(theta.theta), tape.constant(z0), times);
  std::vector<Tensor> out;
  for (const auto& v : r.recon) out.push_back(v.value());
  return out;
}

ForwardResult forward(const FNODEModel& m, const data::Trajectory& x, const NoiseDraw& noise) {
  ForwardResult res;
  res.q_z0 = nets::encode(m.enc_z0, m.params, x);
  res.q_gamma = nets::encode(m.enc_gamma, m.params, x);
  res.z0 = reparameterize(res.q_z0, noise.z0);
  res.gamma = reparameterize(res.q_gamma, noise.gamma);
  const nets::WeightVector theta = nets::hypernet_map(m.hyper, m.params, res.gamma);
  tg::Tape tape;
  const tg::ParamVars dec(tape, m.params, m.dec.prefix + ".");
  const Rollout r = rollout(m, dec, tape.constant(theta.theta), tape.constant(res.z0), x.times);
  for (std::size_t i = 0; i < r.recon.size(); ++i) {
    res.recon.push_back(r.recon[i].value());
    res.z_path.push_back(r.states[i].value());
  }
  return res;
}

double gaussian_loglik(const data::Trajectory& x, std::span<const Tensor> recon, double sigma_x) {
  if (recon.size() != x.length()) throw std::invalid_argument("reconstruction length differs from trajectory");
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < recon.size(); ++t) {
    for (std::size_t d = 0; d < x.obs_dim(); ++d) {
      const double r = x.values[t][d] - recon[t][d];
      sse += r * r;
      ++n;
    }
  }
  return -sse / (2.0 * sigma_x * sigma_x) - static_cast<double>(n) * loglik_norm(sigma_x);
}

ELBOBreakdown elbo_loss(const FNODEModel& m, const data::Trajectory& x, std::span<const NoiseDraw> draws,
                        double kl_weight) {
  if (draws.empty()) throw std::invalid_argument("elbo_loss needs at least one draw");
  if (kl_weight < 0.0 || kl_weight > 1.0) throw std::invalid_argument("kl_weight must lie in [0,1]");
  ELBOBreakdown out;
  out.kl_weight = kl_weight;
  for (const auto& d : draws) {
    const ForwardResult f = forward(m, x, d);
    out.recon_loglik += gaussian_loglik(x, f.recon, m.sigma_x);
    out.kl_z0 = kl_gaussian(f.q_z0);
    out.kl_gamma = kl_gaussian(f.q_gamma);
  }
  out.recon_loglik /= static_cast<double>(draws.size());
  out.total = out.recon_loglik - kl_weight * (out.kl_z0 + out.kl_gamma);
  return out;
}

ELBOBreakdown elbo_loss(const FNODEModel& m, const data::Trajectory& x, int mc_samples, double kl_weight, Rng& rng) {
  std::vector<NoiseDraw> draws;
  for (int k = 0; k < mc_samples; ++k) draws.push_back(draw_noise(m, rng));
  return elbo_loss(m, x, draws, kl_weight);
}

namespace {

// Reconstruction pass for one (trajectory, draw) row on its own tape.
struct RowPass {
  double loglik = 0.0;
  Tensor dtheta;
  Tensor dz0;
  std::vector<Tensor> ddec;
};

RowPass row_pass(const FNODEModel& m, const data::Trajectory& x, Tensor theta, Tensor z0, bool want_grad) {
  tg::Tape tape;
  const Var th = tape.leaf(std::move(theta));
  const Var z = tape.leaf(std::move(z0));
  const tg::ParamVars dec(tape, m.params, m.dec.prefix + ".");
  const Rollout r = rollout(m, dec, th, z, x.times);

  const Var pred = tape.concat(r.recon);
  const Var target = tape.constant(Tensor::vector(flat_values(x)));
  const Var sse = tape.sum(tape.square(tape.sub(pred, target)));
  const Var ll = tape.scale(sse, -1.0 / (2.0 * m.sigma_x * m.sigma_x));

  RowPass out;
  out.loglik = ll.value()[0] - static_cast<double>(target.size()) * loglik_norm(m.sigma_x);
  if (want_grad) {
    tape.backward(ll);
    out.dtheta = tape.grad(th);
    out.dz0 = tape.grad(z);
    for (const auto& [name, _] : m.params)
      if (name.starts_with(m.dec.prefix + ".")) out.ddec.push_back(tape.grad(dec[name]));
  }
  return out;
}

BatchGradient batch_pass(const FNODEModel& m, std::span<const data::Trajectory* const> batch,
                         std::span<const NoiseDraw> draws, double kl_weight, bool want_grad) {
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("empty batch");
  if (draws.size() % B != 0 || draws.empty()) throw std::invalid_argument("draw count must be a multiple of the batch");
  const std::size_t M = draws.size() / B;
  const std::size_t R = B * M;

  tg::Tape tape;
  const tg::ParamVars vars(tape, m.params);

  const std::size_t in_w = m.enc_z0.spec.input_width();
  std::vector<double> xin;
  xin.reserve(B * in_w);
  for (const auto* x : batch) {
    const Tensor row = m.enc_z0.input(*x);
    xin.insert(xin.end(), row.values().begin(), row.values().end());
  }
  const Var X = tape.constant(Tensor::matrix(B, in_w, std::move(xin)));
  const Var ez = nets::encode_batch(m.enc_z0, vars, X);
  const Var eg = nets::encode_batch(m.enc_gamma, vars, X);

  std::vector<Var> kls, z0s, gammas;
  ELBOBreakdown elbo;
  elbo.kl_weight = kl_weight;
  for (std::size_t i = 0; i < B; ++i) {
    const auto qz = nets::split_gaussian(tape.slice(ez, i * 2 * m.latent_dim, {2 * m.latent_dim}));
    const auto qg = nets::split_gaussian(tape.slice(eg, i * 2 * m.gamma_dim, {2 * m.gamma_dim}));
    const Var klz = kl_gaussian(qz);
    const Var klg = kl_gaussian(qg);
    elbo.kl_z0 += klz.value()[0];
    elbo.kl_gamma += klg.value()[0];
    kls.push_back(klz);
    kls.push_back(klg);
    for (std::size_t k = 0; k < M; ++k) {
      const NoiseDraw& d = draws[i * M + k];
      z0s.push_back(reparameterize(qz, tape.constant(d.z0)));
      gammas.push_back(reparameterize(qg, tape.constant(d.gamma)));
    }
  }
  const Var G = tape.reshape(tape.concat(gammas), {R, m.gamma_dim});
  const Var Theta = nets::hypernet_map(m.hyper, vars, G);
  const std::size_t wc = m.f_spec.weight_count();

  std::vector<RowPass> rows(R);
  std::exception_ptr failure;
  const long nrows = static_cast<long>(R);
#pragma omp parallel for schedule(dynamic)
  for (long r = 0; r < nrows; ++r) {
    try {
      const auto& th = Theta.value().values();
      Tensor theta({wc}, std::vector<double>(th.begin() + r * static_cast<long>(wc),
                                              th.begin() + (r + 1) * static_cast<long>(wc)));
      rows[r] = row_pass(m, *batch[r / static_cast<long>(M)], std::move(theta), z0s[r].value(), want_grad);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& row : rows) elbo.recon_loglik += row.loglik;
  elbo.recon_loglik /= static_cast<double>(R);
  elbo.kl_z0 /= static_cast<double>(B);
  elbo.kl_gamma /= static_cast<double>(B);
  elbo.total = elbo.recon_loglik - kl_weight * (elbo.kl_z0 + elbo.kl_gamma);
  if (!std::isfinite(elbo.total)) throw tg::NonFiniteError("non-finite ELBO", 0);

  BatchGradient out{elbo, {}};
  if (!want_grad) return out;

  // loss = -(1/R) sum_r loglik_r + (w/B) sum_i KL_i
  const double rscale = -1.0 / static_cast<double>(R);
  std::vector<std::pair<Var, Tensor>> seeds;
  Tensor dTheta({R, wc});
  for (std::size_t r = 0; r < R; ++r) {
    const auto& g = rows[r].dtheta;
    for (std::size_t j = 0; j < wc; ++j) dTheta[r * wc + j] = rscale * g[j];
    Tensor dz = rows[r].dz0;
    for (auto& v : dz.data()) v *= rscale;
    seeds.emplace_back(z0s[r], std::move(dz));
  }
  seeds.emplace_back(Theta, std::move(dTheta));
  if (kl_weight > 0.0) {
    const Var klsum = tape.sum(tape.concat(kls));
    seeds.emplace_back(klsum, Tensor::scalar(kl_weight / static_cast<double>(B)));
  }
  tape.backward(seeds);

  for (const auto& [name, value] : m.params) {
    if (name.starts_with(m.dec.prefix + ".")) {
      out.grad.add(name, Tensor(value.shape()));
    } else {
      out.grad.add(name, tape.grad(vars[name]));
    }
  }
  // Decoder gradients come from the row tapes, reduced in row order.
  std::size_t k = 0;
  for (const auto& [name, value] : m.params) {
    if (!name.starts_with(m.dec.prefix + ".")) continue;
    Tensor& g = out.grad.get(name);
    for (const auto& row : rows) {
      const auto& d = row.ddec[k];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += rscale * d[j];
    }
    ++k;
  }
  return out;
}

}  // namespace

BatchGradient batch_gradient(const FNODEModel& m, std::span<const data::Trajectory* const> batch,
                             std::span<const NoiseDraw> draws, double kl_weight) {
  return batch_pass(m, batch, draws, kl_weight, true);
}

double batch_loss(const FNODEModel& m, std::span<const data::Trajectory* const> batch,
                  std::span<const NoiseDraw> draws, double kl_weight) {
  return -batch_pass(m, batch, draws, kl_weight, false).elbo.total;
}

std::vector<Tensor> reconstruct(const FNODEModel& m, const data::Trajectory& x, const ode::TimeGrid& times,
                                bool use_posterior_mean, Rng* rng) {
  const auto qz = nets::encode(m.enc_z0, m.params, x);
  const auto qg = nets::encode(m.enc_gamma, m.params, x);
  if (use_posterior_mean) return generate(m, qz.mean, qg.mean, times.times());
  if (rng == nullptr) throw std::invalid_argument("sampled reconstruction needs an rng");
  const NoiseDraw d = draw_noise(m, *rng);
  return generate(m, reparameterize(qz, d.z0), reparameterize(qg, d.gamma), times.times());
}

}  // namespace fnode
