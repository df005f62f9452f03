#include "fnode/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace fnode::nets {

std::size_t MLPSpec::weight_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
  return n;
}

void MLPSpec::validate() const {
  if (layer_widths.size() < 2) throw std::invalid_argument("MLP needs at least an input and an output width");
  for (auto w : layer_widths)
    if (w == 0) throw std::invalid_argument("MLP layer widths must be positive");
}

std::string weight_name(const std::string& prefix, std::size_t layer) { return prefix + ".W" + std::to_string(layer); }
std::string bias_name(const std::string& prefix, std::size_t layer) { return prefix + ".b" + std::to_string(layer); }

void init_mlp(tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(out * in), b(out);
    for (auto& v : w) v = u(rng);
    for (auto& v : b) v = u(rng);
    params.add(weight_name(prefix, l), tg::Tensor::matrix(out, in, std::move(w)));
    params.add(bias_name(prefix, l), tg::Tensor::vector(std::move(b)));
  }
}

void init_mlp_zero(tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
    params.add(weight_name(prefix, l), tg::Tensor({out, in}));
    params.add(bias_name(prefix, l), tg::Tensor({out}));
  }
}

tg::Tensor flatten_mlp(const tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec) {
  std::vector<double> flat;
  flat.reserve(spec.weight_count());
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    for (const auto& name : {weight_name(prefix, l), bias_name(prefix, l)}) {
      const auto& v = params.get(name).values();
      flat.insert(flat.end(), v.begin(), v.end());
    }
  }
  return tg::Tensor::vector(std::move(flat));
}

namespace {

tg::Var activate(const MLPSpec& spec, std::size_t layer, tg::Var y) {
  const bool last = layer + 1 == spec.layers();
  if (!last || spec.final_activation == Activation::Tanh) return tg::tanh(y);
  return y;
}

void check_input(const MLPSpec& spec, const tg::Var& input) {
  if (input.value().cols() != spec.input_width() || input.value().rank() == 0) {
    throw std::invalid_argument("MLP input width " + std::to_string(input.value().cols()) + " does not match " +
                                std::to_string(spec.input_width()));
  }
}

}  // namespace

tg::Var mlp_forward(const MLPSpec& spec, const tg::ParamVars& params, const std::string& prefix, tg::Var input) {
  check_input(spec, input);
  tg::Var x = input;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    x = x.tape->linear(x, params[weight_name(prefix, l)], params[bias_name(prefix, l)]);
    x = activate(spec, l, x);
  }
  return x;
}

tg::Tensor mlp_forward(const MLPSpec& spec, const tg::ParamSet& params, const std::string& prefix,
                       const tg::Tensor& input) {
  tg::Tape tape;
  tg::ParamVars vars(tape, params, prefix + ".");
  return mlp_forward(spec, vars, prefix, tape.constant(input)).value();
}

FunctionalMLP::FunctionalMLP(const MLPSpec& spec, tg::Var theta) : spec_(&spec) {
  if (theta.value().size() != spec.weight_count()) {
    throw std::invalid_argument("weight vector has " + std::to_string(theta.value().size()) +
                                " entries, architecture expects " + std::to_string(spec.weight_count()));
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
    weights_.push_back(theta.tape->slice(theta, off, {out, in}));
    off += out * in;
    biases_.push_back(theta.tape->slice(theta, off, {out}));
    off += out;
  }
}

tg::Var FunctionalMLP::operator()(tg::Var input) const {
  check_input(*spec_, input);
  tg::Var x = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    x = x.tape->linear(x, weights_[l], biases_[l]);
    x = activate(*spec_, l, x);
  }
  return x;
}

tg::Var functional_forward(const MLPSpec& spec, tg::Var theta, tg::Var input) {
  return FunctionalMLP(spec, theta)(input);
}

tg::Tensor functional_forward(const MLPSpec& spec, const WeightVector& theta, const tg::Tensor& input) {
  tg::Tape tape;
  return functional_forward(spec, tape.constant(theta.theta), tape.constant(input)).value();
}

void Hypernetwork::init(tg::ParamSet& params, Rng& rng, double lambda_init) const {
  if (body.final_activation != Activation::Tanh) throw std::invalid_argument("hypernetwork body must end in tanh");
  init_mlp(params, prefix, body, rng);
  params.add(lambda_name(), tg::Tensor::vector({lambda_init}));
}

tg::Var hypernet_map(const Hypernetwork& h, const tg::ParamVars& params, tg::Var gamma) {
  const tg::Var bounded = mlp_forward(h.body, params, h.prefix, gamma);
  return gamma.tape->mul_scalar(bounded, params[h.lambda_name()]);
}

WeightVector hypernet_map(const Hypernetwork& h, const tg::ParamSet& params, const tg::Tensor& gamma) {
  tg::Tape tape;
  tg::ParamVars vars(tape, params, h.prefix + ".");
  return {hypernet_map(h, vars, tape.constant(gamma)).value()};
}

tg::Tensor encoder_input(const data::Trajectory& x, std::size_t slots, std::size_t obs_dim) {
  if (x.length() == 0) throw std::invalid_argument("cannot encode an empty trajectory");
  if (x.length() > slots) {
    throw std::invalid_argument("trajectory has " + std::to_string(x.length()) + " observations, encoder holds " +
                                std::to_string(slots));
  }
  if (x.obs_dim() != obs_dim) {
    throw std::invalid_argument("trajectory observation width " + std::to_string(x.obs_dim()) +
                                " does not match encoder width " + std::to_string(obs_dim));
  }
  const std::size_t stride = obs_dim + 2;
  std::vector<double> in(slots * stride, 0.0);
  for (std::size_t i = 0; i < x.length(); ++i) {
    in[i * stride] = 1.0;
    in[i * stride + 1] = x.times[i];
    for (std::size_t d = 0; d < obs_dim; ++d) in[i * stride + 2 + d] = x.values[i][d];
  }
  return tg::Tensor::vector(std::move(in));
}

tg::Tensor Encoder::input(const data::Trajectory& x) const { return encoder_input(x, slots, obs_dim); }

tg::Var encode_batch(const Encoder& enc, const tg::ParamVars& params, tg::Var inputs) {
  return mlp_forward(enc.spec, params, enc.prefix, inputs);
}

GaussianVars split_gaussian(tg::Var row) {
  const std::size_t d = row.value().size() / 2;
  return {row.tape->slice(row, 0, {d}), row.tape->slice(row, d, {d})};
}

GaussianParams encode(const Encoder& enc, const tg::ParamSet& params, const data::Trajectory& x) {
  tg::Tape tape;
  tg::ParamVars vars(tape, params, enc.prefix + ".");
  const tg::Var out = mlp_forward(enc.spec, vars, enc.prefix, tape.constant(enc.input(x)));
  const auto g = split_gaussian(out);
  return {g.mean.value(), g.log_var.value()};
}

tg::Var decode(const Decoder& dec, const tg::ParamVars& params, tg::Var z) {
  return mlp_forward(dec.spec, params, dec.prefix, z);
}

tg::Tensor decode(const Decoder& dec, const tg::ParamSet& params, const tg::Tensor& z) {
  return mlp_forward(dec.spec, params, dec.prefix, z);
}

}  // namespace fnode::nets
