#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "fnode/tape.hpp"

namespace fnode::tg {

// Parameter leaves of one recording, looked up by name.
class ParamVars {
 public:
  ParamVars() = default;
  ParamVars(Tape& tape, const ParamSet& params);
  // Only the entries whose name starts with `prefix`.
  ParamVars(Tape& tape, const ParamSet& params, std::string_view prefix);
  void add(const std::string& name, Var v) { vars_.insert_or_assign(name, v); }
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& all() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

// A differentiable computation: records primitives on `tape` and returns the output node.
using Program = std::function<Var(Tape& tape, const ParamVars& params, std::span<const Var> inputs)>;

// Runs the program on a fresh tape. Inputs are recorded as constants.
Tensor evaluate(const Program& program, const ParamSet& params, std::span<const Tensor> inputs);

// d(output)/d(param) for every entry of `params`; the output must be scalar.
// Parameters the program never touches get zero gradients.
ParamSet gradient(const Program& program, const ParamSet& params, std::span<const Tensor> inputs);

// Largest entrywise relative error between gradient() and central differences
// with step h, using max(|analytic|, |numeric|, 1e-8) as denominator.
double finite_diff_check(const Program& program, const ParamSet& params, std::span<const Tensor> inputs,
                         double h);

}  // namespace fnode::tg
