#pragma once

#include <string>
#include <vector>

#include "fnode/data.hpp"
#include "fnode/program.hpp"
#include "fnode/rng.hpp"
#include "fnode/tape.hpp"

namespace fnode::nets {

enum class Activation { None, Tanh };

// Fully connected network: tanh between layers, optional tanh after the last.
struct MLPSpec {
  std::vector<std::size_t> layer_widths;
  Activation final_activation = Activation::None;

  std::size_t layers() const { return layer_widths.size() - 1; }
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
  std::size_t weight_count() const;
  void validate() const;

  friend bool operator==(const MLPSpec&, const MLPSpec&) = default;
};

// Parameter names are "<prefix>.W<l>" ([out,in]) and "<prefix>.b<l>" ([out]).
std::string weight_name(const std::string& prefix, std::size_t layer);
std::string bias_name(const std::string& prefix, std::size_t layer);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
void init_mlp(tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec, Rng& rng);
void init_mlp_zero(tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec);

// Flat theta in functional slicing order: per layer W (row-major out x in), then b.
tg::Tensor flatten_mlp(const tg::ParamSet& params, const std::string& prefix, const MLPSpec& spec);

tg::Var mlp_forward(const MLPSpec& spec, const tg::ParamVars& params, const std::string& prefix, tg::Var input);
tg::Tensor mlp_forward(const MLPSpec& spec, const tg::ParamSet& params, const std::string& prefix,
                       const tg::Tensor& input);

struct WeightVector {
  tg::Tensor theta;
};

// Layer views into a weight vector. Slicing happens once per bind, so a
// bound network can be applied many times (e.g. inside an ODE solve) cheaply.
class FunctionalMLP {
 public:
  FunctionalMLP(const MLPSpec& spec, tg::Var theta);
  tg::Var operator()(tg::Var input) const;

 private:
  const MLPSpec* spec_;
  std::vector<tg::Var> weights_;
  std::vector<tg::Var> biases_;
};

tg::Var functional_forward(const MLPSpec& spec, tg::Var theta, tg::Var input);
tg::Tensor functional_forward(const MLPSpec& spec, const WeightVector& theta, const tg::Tensor& input);

// theta = lambda * tanh(body(gamma)); the body ends in tanh so |theta_i| <= |lambda|.
struct Hypernetwork {
  MLPSpec body;
  std::string prefix = "hyper";

  std::string lambda_name() const { return prefix + ".lambda"; }
  void init(tg::ParamSet& params, Rng& rng, double lambda_init) const;
};

tg::Var hypernet_map(const Hypernetwork& h, const tg::ParamVars& params, tg::Var gamma);
WeightVector hypernet_map(const Hypernetwork& h, const tg::ParamSet& params, const tg::Tensor& gamma);

// Diagonal Gaussian in log-variance form.
struct GaussianParams {
  tg::Tensor mean;
  tg::Tensor log_var;

  std::size_t dim() const { return mean.size(); }
};

struct GaussianVars {
  tg::Var mean;
  tg::Var log_var;
};

// Fully connected encoder over a fixed number of (mask, time, value...) slots.
// Shorter trajectories leave trailing slots zero with mask 0.
struct Encoder {
  MLPSpec spec;  // input width slots*(obs_dim+2), output width 2*out_dim
  std::string prefix;
  std::size_t slots = 0;
  std::size_t obs_dim = 0;

  std::size_t out_dim() const { return spec.output_width() / 2; }
  tg::Tensor input(const data::Trajectory& x) const;
};

tg::Tensor encoder_input(const data::Trajectory& x, std::size_t slots, std::size_t obs_dim);

// Batched encoding: rows of `inputs` are encoder inputs; output rows are [mean | log_var].
tg::Var encode_batch(const Encoder& enc, const tg::ParamVars& params, tg::Var inputs);
GaussianVars split_gaussian(tg::Var row);
GaussianParams encode(const Encoder& enc, const tg::ParamSet& params, const data::Trajectory& x);

// Observation-space mean D(z_t).
struct Decoder {
  MLPSpec spec;
  std::string prefix = "dec";
};

tg::Var decode(const Decoder& dec, const tg::ParamVars& params, tg::Var z);
tg::Tensor decode(const Decoder& dec, const tg::ParamSet& params, const tg::Tensor& z);

}  // namespace fnode::nets
