#include "fnode/program.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace fnode::tg {

ParamVars::ParamVars(Tape& tape, const ParamSet& params) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value));
}

ParamVars::ParamVars(Tape& tape, const ParamSet& params, std::string_view prefix) {
  for (const auto& [name, value] : params)
    if (name.starts_with(prefix)) vars_.emplace(name, tape.leaf(value));
}

Var ParamVars::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw Error("program references unknown parameter: " + name);
  return it->second;
}

namespace {

struct Recording {
  Tape tape;
  std::vector<Var> inputs;
  Var out;
};

void record(Recording& rec, const Program& program, const ParamVars& vars, std::span<const Tensor> inputs) {
  for (const auto& t : inputs) rec.inputs.push_back(rec.tape.constant(t));
  rec.out = program(rec.tape, vars, rec.inputs);
}

double scalar_value(const Program& program, const ParamSet& params, std::span<const Tensor> inputs) {
  const Tensor out = evaluate(program, params, inputs);
  if (out.size() != 1) throw Error("program output is not scalar: " + shape_str(out.shape()));
  return out[0];
}

}  // namespace

Tensor evaluate(const Program& program, const ParamSet& params, std::span<const Tensor> inputs) {
  Recording rec;
  ParamVars vars(rec.tape, params);
  record(rec, program, vars, inputs);
  return rec.out.value();
}

ParamSet gradient(const Program& program, const ParamSet& params, std::span<const Tensor> inputs) {
  Recording rec;
  ParamVars vars(rec.tape, params);
  record(rec, program, vars, inputs);
  rec.tape.backward(rec.out);
  ParamSet grads;
  for (const auto& [name, _] : params) grads.add(name, rec.tape.grad(vars[name]));
  return grads;
}

double finite_diff_check(const Program& program, const ParamSet& params, std::span<const Tensor> inputs,
                         double h) {
  if (!(h > 0.0)) throw Error("finite_diff_check: h must be positive");
  const ParamSet analytic = gradient(program, params, inputs);
  ParamSet probe = params;
  double worst = 0.0;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    auto& [name, tensor] = probe.entry(e);
    const Tensor& g = analytic.get(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double up = scalar_value(program, probe, inputs);
      tensor[i] = orig - h;
      const double down = scalar_value(program, probe, inputs);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(g[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace fnode::tg
